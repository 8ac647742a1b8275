#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tica/data.hpp"
#include "tica/image.hpp"
#include "tica/model.hpp"
#include "tica/random.hpp"

namespace tica::test {

inline ShadowMask random_mask(Rng& rng, int rows, int cols, double lo = 0.0, double hi = 1.0) {
  ShadowMask m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
  return m;
}

inline ShadowMask random_binary(Rng& rng, int rows, int cols, double p = 0.5) {
  ShadowMask m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  return m;
}

inline ImageTensor random_image(Rng& rng, int rows, int cols, int channels = 3) {
  ImageTensor img(rows, cols, channels);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.uniform());
  return img;
}

inline ModelConfig tiny_model(int size = 16) {
  ModelConfig cfg;
  cfg.input_size = {size, size};
  cfg.widths = {4, 6, 8, 8};
  cfg.decoder_width = 4;
  return cfg;
}

inline std::vector<ImageTensor> random_images(Rng& rng, int count, int size, int channels = 3) {
  std::vector<ImageTensor> out;
  for (int i = 0; i < count; ++i) out.push_back(random_image(rng, size, size, channels));
  return out;
}

/// Small labelled set of 32x32 scenes from the procedural generator.
inline SynthConfig small_synth(int train = 8, int test = 4) {
  SynthConfig cfg;
  cfg.canvas = {32, 32};
  cfg.train_count = train;
  cfg.test_count = test;
  return cfg;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(reinterpret_cast<std::uintptr_t>(this) ^ static_cast<std::uint64_t>(std::hash<std::string>{}(tag)));
    path_ = std::filesystem::temp_directory_path() / ("tica_" + tag + "_" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace tica::test
