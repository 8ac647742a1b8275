#include "tica/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "tica/digest.hpp"
#include "tica/geometry.hpp"
#include "tica/png_io.hpp"
#include "tica/random.hpp"

namespace tica {
namespace {

constexpr int kSuper = 4;  // supersampling factor per axis for shape coverage

void check_range(const RealRange& r, const char* what) {
  if (!(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi)) {
    throw std::invalid_argument(std::string("SynthConfig: ") + what + " range is empty or not finite");
  }
}

void check_range(const IntRange& r, const char* what) {
  if (r.lo < 0 || r.lo > r.hi) throw std::invalid_argument(std::string("SynthConfig: ") + what + " range is empty");
}

// Smooth value noise in [0,1]: bilinearly interpolated random lattices,
// amplitude halving per octave.
std::vector<double> value_noise(Rng& rng, Size2 size, int octaves, int base_cells) {
  std::vector<double> out(size.area(), 0.0);
  double amp = 1.0, total = 0.0;
  int cells = base_cells;
  for (int o = 0; o < octaves; ++o) {
    const int gw = cells + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gw);
    for (double& v : lattice) v = rng.uniform();
    for (int r = 0; r < size.rows; ++r) {
      const double fy = (r + 0.5) / size.rows * cells;
      const int y0 = static_cast<int>(fy);
      const double ty = fy - y0;
      const double sy = ty * ty * (3.0 - 2.0 * ty);
      for (int c = 0; c < size.cols; ++c) {
        const double fx = (c + 0.5) / size.cols * cells;
        const int x0 = static_cast<int>(fx);
        const double tx = fx - x0;
        const double sx = tx * tx * (3.0 - 2.0 * tx);
        const double a = lattice[static_cast<std::size_t>(y0) * gw + x0];
        const double b = lattice[static_cast<std::size_t>(y0) * gw + x0 + 1];
        const double d = lattice[static_cast<std::size_t>(y0 + 1) * gw + x0];
        const double e = lattice[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
        out[static_cast<std::size_t>(r) * size.cols + c] +=
            amp * ((a * (1 - sx) + b * sx) * (1 - sy) + (d * (1 - sx) + e * sx) * sy);
      }
    }
    total += amp;
    amp *= 0.5;
    cells *= 2;
  }
  for (double& v : out) v /= total;
  return out;
}

struct Shape {
  bool ellipse = false;
  double cy = 0, cx = 0;
  double a = 0, b = 0, theta = 0;  // ellipse
  std::vector<std::pair<double, double>> poly;

  bool contains(double y, double x) const {
    if (ellipse) {
      const double dy = y - cy, dx = x - cx;
      const double u = dx * std::cos(theta) + dy * std::sin(theta);
      const double v = -dx * std::sin(theta) + dy * std::cos(theta);
      return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const auto [yi, xi] = poly[i];
      const auto [yj, xj] = poly[j];
      if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
    }
    return inside;
  }
};

Shape random_primitive(Rng& rng, bool ellipse, double cy, double cx, double radius) {
  Shape s;
  s.ellipse = ellipse;
  s.cy = cy;
  s.cx = cx;
  if (ellipse) {
    s.a = radius * rng.uniform(0.6, 1.0);
    s.b = radius * rng.uniform(0.35, 0.8);
    s.theta = rng.uniform(0.0, std::numbers::pi);
  } else {
    const int n = static_cast<int>(rng.uniform_int(3, 7));
    std::vector<double> angles(n);
    for (double& t : angles) t = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    for (double t : angles) {
      const double r = radius * rng.uniform(0.6, 1.0);
      s.poly.emplace_back(cy + r * std::sin(t), cx + r * std::cos(t));
    }
  }
  return s;
}

// Shapes making up one region; a union family yields two overlapping parts.
std::vector<Shape> random_region(Rng& rng, ShapeFamily family, Size2 canvas, const RealRange& radius_frac) {
  const double side = std::min(canvas.rows, canvas.cols);
  const double radius = side * rng.uniform(radius_frac.lo, radius_frac.hi);
  const double cy = rng.uniform(0.0, canvas.rows);
  const double cx = rng.uniform(0.0, canvas.cols);
  std::vector<Shape> parts;
  switch (family) {
    case ShapeFamily::Polygon:
      parts.push_back(random_primitive(rng, false, cy, cx, radius));
      break;
    case ShapeFamily::Ellipse:
      parts.push_back(random_primitive(rng, true, cy, cx, radius));
      break;
    case ShapeFamily::Union: {
      parts.push_back(random_primitive(rng, rng.bernoulli(0.5), cy, cx, radius));
      const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double d = radius * rng.uniform(0.4, 0.9);
      parts.push_back(random_primitive(rng, rng.bernoulli(0.5), cy + d * std::sin(t), cx + d * std::cos(t),
                                       radius * rng.uniform(0.6, 1.0)));
      break;
    }
  }
  return parts;
}

// Fraction of supersamples of each pixel inside any of the shapes.
void add_coverage(const std::vector<Shape>& shapes, Size2 canvas, std::vector<double>& cover) {
  for (int r = 0; r < canvas.rows; ++r) {
    for (int c = 0; c < canvas.cols; ++c) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double y = r + (sy + 0.5) / kSuper;
          const double x = c + (sx + 0.5) / kSuper;
          for (const auto& s : shapes) {
            if (s.contains(y, x)) {
              ++hits;
              break;
            }
          }
        }
      }
      double& v = cover[static_cast<std::size_t>(r) * canvas.cols + c];
      v = std::max(v, static_cast<double>(hits) / (kSuper * kSuper));
    }
  }
}

std::vector<double> gaussian_blur(const std::vector<double>& src, Size2 size, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int r = 0; r < size.rows; ++r) {
    for (int c = 0; c < size.cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int cc = std::clamp(c + i, 0, size.cols - 1);
        acc += k[i + radius] * src[static_cast<std::size_t>(r) * size.cols + cc];
      }
      tmp[static_cast<std::size_t>(r) * size.cols + c] = acc;
    }
  }
  for (int r = 0; r < size.rows; ++r) {
    for (int c = 0; c < size.cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = std::clamp(r + i, 0, size.rows - 1);
        acc += k[i + radius] * tmp[static_cast<std::size_t>(rr) * size.cols + c];
      }
      out[static_cast<std::size_t>(r) * size.cols + c] = acc;
    }
  }
  return out;
}

std::uint64_t split_key(const std::string& split) {
  if (split == "train") return 1;
  if (split == "test") return 2;
  throw std::invalid_argument("generate_sample: split must be 'train' or 'test', got '" + split + "'");
}

std::string index_name(int index) {
  std::string s = std::to_string(index);
  if (s.size() < 4) s.insert(0, 4 - s.size(), '0');
  return s;
}

std::string file_stem(const std::string& id) {
  const auto slash = id.find_last_of('/');
  return slash == std::string::npos ? id : id.substr(slash + 1);
}

void digest_pairs(Sha256& h, std::span<const SamplePair> pairs) {
  for (const auto& p : pairs) {
    h.update(p.id);
    h.update(std::string_view("\0", 1));
    const std::string shape = std::to_string(p.image.rows()) + "x" + std::to_string(p.image.cols()) + "x" +
                              std::to_string(p.image.channels());
    h.update(shape);
    std::vector<unsigned char> bytes(p.image.size() + p.mask.size());
    for (std::size_t i = 0; i < p.image.size(); ++i) bytes[i] = quantize_u8(p.image[i]);
    for (std::size_t i = 0; i < p.mask.size(); ++i) bytes[p.image.size() + i] = p.mask[i] >= 0.5 ? 255 : 0;
    h.update(bytes);
  }
}

nlohmann::json synth_to_json(const SynthConfig& c) {
  std::vector<std::string> fam;
  for (auto f : c.shape_families) fam.emplace_back(to_string(f));
  auto rr = [](const RealRange& r) { return nlohmann::json::array({r.lo, r.hi}); };
  auto ir = [](const IntRange& r) { return nlohmann::json::array({r.lo, r.hi}); };
  return {{"canvas", {c.canvas.rows, c.canvas.cols}},
          {"channels", c.channels},
          {"noise_octaves", c.noise_octaves},
          {"texture_contrast", c.texture_contrast},
          {"shadow_count", ir(c.shadow_count)},
          {"shape_families", fam},
          {"shadow_radius", rr(c.shadow_radius)},
          {"alpha", rr(c.alpha)},
          {"penumbra_sigma", rr(c.penumbra_sigma)},
          {"distractor_count", ir(c.distractor_count)},
          {"distractor_radius", rr(c.distractor_radius)},
          {"distractor_albedo", rr(c.distractor_albedo)},
          {"gain", c.gain},
          {"gamma", c.gamma},
          {"train_count", c.train_count},
          {"test_count", c.test_count},
          {"seed", c.seed}};
}

}  // namespace

const char* to_string(ShapeFamily f) noexcept {
  switch (f) {
    case ShapeFamily::Polygon:
      return "polygon";
    case ShapeFamily::Ellipse:
      return "ellipse";
    case ShapeFamily::Union:
      return "union";
  }
  return "?";
}

ShapeFamily parse_shape_family(const std::string& s) {
  if (s == "polygon") return ShapeFamily::Polygon;
  if (s == "ellipse") return ShapeFamily::Ellipse;
  if (s == "union") return ShapeFamily::Union;
  throw std::invalid_argument("unknown shape family '" + s + "' (expected polygon, ellipse or union)");
}

void SynthConfig::validate() const {
  if (canvas.rows <= 0 || canvas.cols <= 0) throw std::invalid_argument("SynthConfig: canvas must be non-empty");
  if (channels != 1 && channels != 3) throw std::invalid_argument("SynthConfig: channels must be 1 or 3");
  if (noise_octaves < 1) throw std::invalid_argument("SynthConfig: noise_octaves must be >= 1");
  if (!(texture_contrast >= 0.0 && texture_contrast <= 1.0)) {
    throw std::invalid_argument("SynthConfig: texture_contrast must lie in [0, 1]");
  }
  check_range(shadow_count, "shadow_count");
  check_range(distractor_count, "distractor_count");
  check_range(shadow_radius, "shadow_radius");
  check_range(alpha, "alpha");
  check_range(penumbra_sigma, "penumbra_sigma");
  check_range(distractor_radius, "distractor_radius");
  check_range(distractor_albedo, "distractor_albedo");
  if (shape_families.empty()) throw std::invalid_argument("SynthConfig: shape_families is empty");
  if (!(alpha.lo > 0.0 && alpha.hi <= 1.0)) throw std::invalid_argument("SynthConfig: alpha must lie in (0, 1]");
  if (!(shadow_radius.lo > 0.0)) throw std::invalid_argument("SynthConfig: shadow_radius must be positive");
  if (!(distractor_radius.lo > 0.0)) throw std::invalid_argument("SynthConfig: distractor_radius must be positive");
  if (!(penumbra_sigma.lo >= 0.0)) throw std::invalid_argument("SynthConfig: penumbra_sigma must be >= 0");
  if (!(distractor_albedo.lo >= 0.0 && distractor_albedo.hi <= 1.0)) {
    throw std::invalid_argument("SynthConfig: distractor_albedo must lie in [0, 1]");
  }
  if (!(std::isfinite(gain) && gain > 0.0)) throw std::invalid_argument("SynthConfig: gain must be positive");
  if (!(std::isfinite(gamma) && gamma > 0.0)) throw std::invalid_argument("SynthConfig: gamma must be positive");
  if (train_count < 0 || test_count < 0) throw std::invalid_argument("SynthConfig: split counts must be >= 0");
}

ImageTensor apply_intensity_shift(const ImageTensor& img, double gain, double gamma) {
  ImageTensor out = img;
  for (float& v : out.storage()) v = static_cast<float>(std::clamp(std::pow(gain * v, gamma), 0.0, 1.0));
  return out;
}

SamplePair generate_sample(const SynthConfig& cfg, const std::string& split, int index) {
  cfg.validate();
  Rng rng(mix_seed(mix_seed(cfg.seed, split_key(split)), static_cast<std::uint64_t>(index)));
  const Size2 size = cfg.canvas;
  const std::size_t n = size.area();

  // albedo: base colour modulated by value noise
  std::vector<std::vector<double>> albedo(cfg.channels);
  const std::vector<double> tex = value_noise(rng, size, cfg.noise_octaves, 4);
  for (int ch = 0; ch < cfg.channels; ++ch) {
    const double base = rng.uniform(0.45, 0.9);
    albedo[ch].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      albedo[ch][i] = std::clamp(base * (1.0 + cfg.texture_contrast * (tex[i] - 0.5)), 0.0, 1.0);
    }
  }
  // slowly varying illumination
  std::vector<double> illum = value_noise(rng, size, 2, 2);
  for (double& v : illum) v = 0.8 + 0.2 * v;

  // shadows
  std::vector<double> cover(n, 0.0);
  const int shadows = static_cast<int>(rng.uniform_int(cfg.shadow_count.lo, cfg.shadow_count.hi));
  for (int s = 0; s < shadows; ++s) {
    const ShapeFamily fam = cfg.shape_families[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(cfg.shape_families.size()) - 1))];
    add_coverage(random_region(rng, fam, size, cfg.shadow_radius), size, cover);
  }
  const double alpha = rng.uniform(cfg.alpha.lo, cfg.alpha.hi);
  const double sigma = rng.uniform(cfg.penumbra_sigma.lo, cfg.penumbra_sigma.hi);
  const std::vector<double> matte = gaussian_blur(cover, size, sigma);

  ShadowMask mask(size);
  for (std::size_t i = 0; i < n; ++i) mask[i] = cover[i] >= 0.5 ? 1.0 : 0.0;

  // distractors: dark flat albedo, kept off the shadow support
  const int distractors = static_cast<int>(rng.uniform_int(cfg.distractor_count.lo, cfg.distractor_count.hi));
  for (int d = 0; d < distractors; ++d) {
    std::vector<double> dc(n, 0.0);
    const ShapeFamily fam = rng.bernoulli(0.5) ? ShapeFamily::Polygon : ShapeFamily::Ellipse;
    add_coverage(random_region(rng, fam, size, cfg.distractor_radius), size, dc);
    const double dark = rng.uniform(cfg.distractor_albedo.lo, cfg.distractor_albedo.hi);
    for (int ch = 0; ch < cfg.channels; ++ch) {
      const double tint = std::clamp(dark * rng.uniform(0.9, 1.1), cfg.distractor_albedo.lo, cfg.distractor_albedo.hi);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] != 0.0 || dc[i] <= 0.0) continue;
        albedo[ch][i] = (1.0 - dc[i]) * albedo[ch][i] + dc[i] * tint;
      }
    }
  }

  SamplePair out;
  out.id = split + "/" + index_name(index);
  out.image = ImageTensor(size, cfg.channels);
  for (std::size_t i = 0; i < n; ++i) {
    const double light = illum[i] * (1.0 - (1.0 - alpha) * matte[i]);
    for (int ch = 0; ch < cfg.channels; ++ch) {
      out.image[i * cfg.channels + ch] = static_cast<float>(std::clamp(albedo[ch][i] * light, 0.0, 1.0));
    }
  }
  if (split == "test") out.image = apply_intensity_shift(out.image, cfg.gain, cfg.gamma);
  out.mask = std::move(mask);
  return out;
}

SyntheticDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.train.reserve(cfg.train_count);
  ds.test.reserve(cfg.test_count);
  for (int i = 0; i < cfg.train_count; ++i) ds.train.push_back(generate_sample(cfg, "train", i));
  for (int i = 0; i < cfg.test_count; ++i) ds.test.push_back(generate_sample(cfg, "test", i));
  return ds;
}

void save_dataset(std::span<const SamplePair> pairs, const std::filesystem::path& root) {
  if (pairs.empty()) throw std::invalid_argument("save_dataset: no samples to write");
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  for (const auto& p : pairs) {
    if (p.image.size2() != p.mask.size2()) throw std::invalid_argument("save_dataset: image/mask size mismatch for " + p.id);
    const std::string name = file_stem(p.id) + ".png";
    write_png(root / "images" / name, p.image);
    ImageTensor m(p.mask.size2(), 1);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = p.mask[i] >= 0.5 ? 1.0f : 0.0f;
    write_png(root / "masks" / name, m);
  }
}

std::vector<SamplePair> load_dataset(const std::filesystem::path& root, std::optional<Size2> size) {
  namespace fs = std::filesystem;
  const fs::path img_dir = root / "images";
  const fs::path mask_dir = root / "masks";
  if (!fs::is_directory(img_dir)) throw std::runtime_error("load_dataset: missing directory " + img_dir.string());
  if (!fs::is_directory(mask_dir)) throw std::runtime_error("load_dataset: missing directory " + mask_dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(img_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("load_dataset: no images in " + img_dir.string());

  const std::string prefix = fs::absolute(root).lexically_normal().filename().string();
  std::vector<SamplePair> out;
  out.reserve(names.size());
  for (const auto& name : names) {
    SamplePair p;
    const std::string stem = fs::path(name).stem().string();
    p.id = prefix.empty() ? stem : prefix + "/" + stem;
    if (!fs::exists(mask_dir / name)) throw std::runtime_error("load_dataset: no mask for " + p.id);
    p.image = read_png(img_dir / name);
    const ImageTensor m = read_png(mask_dir / name);
    if (m.size2() != p.image.size2()) {
      throw std::runtime_error("load_dataset: image/mask dimension mismatch for " + p.id + " (" +
                               to_string(p.image.size2()) + " vs " + to_string(m.size2()) + ")");
    }
    p.mask = ShadowMask(m.size2());
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
      p.mask[i] = std::lround(m[i * m.channels()] * 255.0) >= 128 ? 1.0 : 0.0;
    }
    if (size && *size != p.image.size2()) {
      ViewTransform t = ViewTransform::identity(p.image.size2());
      t.output_size = *size;
      p.image = apply_transform(p.image, t, Interpolation::Bilinear);
      p.mask = apply_transform(p.mask, t, Interpolation::Nearest);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string dataset_digest(std::span<const SamplePair> pairs) {
  Sha256 h;
  digest_pairs(h, pairs);
  return h.hex();
}

std::string dataset_digest(const SyntheticDataset& ds) {
  Sha256 h;
  h.update(std::string_view("train"));
  digest_pairs(h, ds.train);
  h.update(std::string_view("test"));
  digest_pairs(h, ds.test);
  return h.hex();
}

std::string save_synthetic(const SyntheticDataset& ds, const SynthConfig& cfg, const std::filesystem::path& root) {
  if (!ds.train.empty()) save_dataset(ds.train, root / "train");
  if (!ds.test.empty()) save_dataset(ds.test, root / "test");
  const std::string digest = dataset_digest(ds);
  nlohmann::json manifest{{"generator", "tica-synthetic"},
                          {"config", synth_to_json(cfg)},
                          {"seed", cfg.seed},
                          {"counts", {{"train", ds.train.size()}, {"test", ds.test.size()}}},
                          {"digest", digest}};
  std::filesystem::create_directories(root);
  std::ofstream f(root / "manifest.json");
  if (!f) throw std::runtime_error("cannot write " + (root / "manifest.json").string());
  f << manifest.dump(2) << "\n";
  return digest;
}

std::vector<ImageTensor> images_of(std::span<const SamplePair> pairs) {
  std::vector<ImageTensor> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.image);
  return out;
}

}  // namespace tica
