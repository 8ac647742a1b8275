#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tica/image.hpp"

namespace tica {

struct SamplePair {
  ImageTensor image;
  /// Binary ground truth, same H x W as the image.
  ShadowMask mask;
  /// "<split>/<NNNN>".
  std::string id;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const RealRange&) const = default;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
  bool operator==(const IntRange&) const = default;
};

enum class ShapeFamily : std::uint8_t { Polygon, Ellipse, Union };

const char* to_string(ShapeFamily f) noexcept;
ShapeFamily parse_shape_family(const std::string& s);

struct SynthConfig {
  Size2 canvas{128, 128};
  int channels = 3;
  /// Value-noise octaves of the albedo texture and its contrast around the
  /// base colour.
  int noise_octaves = 4;
  double texture_contrast = 0.5;
  IntRange shadow_count{1, 3};
  std::vector<ShapeFamily> shape_families{ShapeFamily::Polygon, ShapeFamily::Ellipse, ShapeFamily::Union};
  /// Shadow radius as a fraction of the shorter canvas side.
  RealRange shadow_radius{0.12, 0.28};
  /// Multiplicative illumination factor inside shadows.
  RealRange alpha{0.3, 0.7};
  /// Gaussian penumbra width in pixels.
  RealRange penumbra_sigma{0.8, 2.5};
  IntRange distractor_count{1, 3};
  RealRange distractor_radius{0.06, 0.16};
  RealRange distractor_albedo{0.05, 0.3};
  /// Photometric shift v -> clamp((gain * v)^gamma) on the test split only.
  double gain = 1.4;
  double gamma = 1.3;
  int train_count = 400;
  int test_count = 100;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticDataset {
  std::vector<SamplePair> train;
  std::vector<SamplePair> test;
};

/// One scene; `split` is "train" or "test" (the latter receives the shift).
SamplePair generate_sample(const SynthConfig& cfg, const std::string& split, int index);
SyntheticDataset generate_synthetic(const SynthConfig& cfg);

/// v -> clamp((gain * v)^gamma, 0, 1) elementwise.
ImageTensor apply_intensity_shift(const ImageTensor& img, double gain, double gamma);

/// Writes root/images/NNNN.png and root/masks/NNNN.png (masks as {0,255}).
void save_dataset(std::span<const SamplePair> pairs, const std::filesystem::path& root);
/// Reads the layout written by save_dataset, sorted by filename. Images are
/// scaled to [0,1], masks binarised at 128, and both resized to `size` when
/// given (bilinear image, nearest mask).
std::vector<SamplePair> load_dataset(const std::filesystem::path& root, std::optional<Size2> size = std::nullopt);

/// root/{train,test}/... plus root/manifest.json. Returns the digest.
std::string save_synthetic(const SyntheticDataset& ds, const SynthConfig& cfg, const std::filesystem::path& root);

/// SHA-256 over the 8-bit serialisation of both splits (ids, shapes, pixels).
std::string dataset_digest(const SyntheticDataset& ds);
std::string dataset_digest(std::span<const SamplePair> pairs);

std::vector<ImageTensor> images_of(std::span<const SamplePair> pairs);

}  // namespace tica
