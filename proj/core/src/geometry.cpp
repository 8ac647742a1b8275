#include "tica/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tica {
namespace {

constexpr double kEdgeTol = 1e-9;

int scaled_extent(int canonical, double scale) {
  // guard against 0.7 * 100 = 69.99999...
  return static_cast<int>(std::floor(canonical * scale + 1e-9));
}

SamplingPlan::Tap bilinear_tap(Coord2 p, Size2 src) {
  const double y = std::clamp(p.row, 0.0, static_cast<double>(src.rows - 1));
  const double x = std::clamp(p.col, 0.0, static_cast<double>(src.cols - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, src.rows - 1);
  const int x1 = std::min(x0 + 1, src.cols - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  SamplingPlan::Tap tap{};
  tap.index[0] = y0 * src.cols + x0;
  tap.index[1] = y0 * src.cols + x1;
  tap.index[2] = y1 * src.cols + x0;
  tap.index[3] = y1 * src.cols + x1;
  tap.weight[0] = (1.0 - fy) * (1.0 - fx);
  tap.weight[1] = (1.0 - fy) * fx;
  tap.weight[2] = fy * (1.0 - fx);
  tap.weight[3] = fy * fx;
  return tap;
}

SamplingPlan::Tap nearest_tap(Coord2 p, Size2 src) {
  const int y = std::clamp(static_cast<int>(std::floor(p.row + 0.5)), 0, src.rows - 1);
  const int x = std::clamp(static_cast<int>(std::floor(p.col + 0.5)), 0, src.cols - 1);
  SamplingPlan::Tap tap{};
  const int idx = y * src.cols + x;
  for (int k = 0; k < 4; ++k) tap.index[k] = idx;
  tap.weight[0] = 1.0;
  return tap;
}

// canonical -> view grid, clamp-to-edge, every destination valid
SamplingPlan view_plan(const ViewTransform& t, Interpolation interp) {
  const Size2 dst = t.output_size;
  std::vector<SamplingPlan::Tap> taps(dst.area());
  for (int r = 0; r < dst.rows; ++r) {
    for (int c = 0; c < dst.cols; ++c) {
      const Coord2 src = t.to_canonical({static_cast<double>(r), static_cast<double>(c)});
      taps[static_cast<std::size_t>(r) * dst.cols + c] =
          interp == Interpolation::Bilinear ? bilinear_tap(src, t.canonical_size)
                                            : nearest_tap(src, t.canonical_size);
    }
  }
  return SamplingPlan(t.canonical_size, dst, std::move(taps), std::vector<std::uint8_t>(dst.area(), 1));
}

template <typename T>
Image<T> resample(const Image<T>& img, const ViewTransform& t, Interpolation interp) {
  t.validate();
  if (img.size2() != t.canonical_size) {
    throw std::invalid_argument("apply_transform: image is " + to_string(img.size2()) +
                                ", transform expects " + to_string(t.canonical_size));
  }
  const SamplingPlan plan = view_plan(t, interp);
  const int ch = img.channels();
  Image<T> out(t.output_size, ch);
  for (std::size_t d = 0; d < t.output_size.area(); ++d) {
    const auto& tap = plan.tap(d);
    for (int k = 0; k < ch; ++k) {
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) {
        acc += tap.weight[j] * static_cast<double>(img[static_cast<std::size_t>(tap.index[j]) * ch + k]);
      }
      out[d * ch + k] = static_cast<T>(acc);
    }
  }
  return out;
}

}  // namespace

AugmentConfig AugmentConfig::defaults(Size2 canonical) {
  AugmentConfig cfg;
  cfg.canonical_size = canonical;
  cfg.crop_size = {static_cast<int>(std::lround(canonical.rows * 0.75)),
                   static_cast<int>(std::lround(canonical.cols * 0.75))};
  cfg.output_size = canonical;
  return cfg;
}

void AugmentConfig::validate() const {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("AugmentConfig: flip_prob outside [0,1]");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) {
    throw std::invalid_argument("AugmentConfig: scale range must satisfy 0 < lo <= hi");
  }
  if (canonical_size.rows <= 0 || canonical_size.cols <= 0) throw std::invalid_argument("AugmentConfig: empty canonical size");
  if (crop_size.rows <= 0 || crop_size.cols <= 0) throw std::invalid_argument("AugmentConfig: empty crop size");
  if (crop_size.rows > scaled_extent(canonical_size.rows, scale_lo) ||
      crop_size.cols > scaled_extent(canonical_size.cols, scale_lo)) {
    throw std::invalid_argument("AugmentConfig: crop " + to_string(crop_size) +
                                " exceeds the smallest scaled image");
  }
  if (output_size.rows < 0 || output_size.cols < 0) throw std::invalid_argument("AugmentConfig: negative output size");
}

ViewTransform ViewTransform::identity(Size2 canonical) {
  ViewTransform t;
  t.canonical_size = canonical;
  t.crop_size = canonical;
  t.output_size = canonical;
  return t;
}

Size2 ViewTransform::scaled_size() const {
  return {scaled_extent(canonical_size.rows, scale), scaled_extent(canonical_size.cols, scale)};
}

void ViewTransform::validate() const {
  if (!(scale > 0.0)) throw std::invalid_argument("ViewTransform: scale must be positive");
  if (crop_size.rows <= 0 || crop_size.cols <= 0) throw std::invalid_argument("ViewTransform: empty crop");
  if (output_size.rows <= 0 || output_size.cols <= 0) throw std::invalid_argument("ViewTransform: empty output");
  const Size2 s = scaled_size();
  if (crop_origin.row < 0 || crop_origin.col < 0 || crop_origin.row + crop_size.rows > s.rows ||
      crop_origin.col + crop_size.cols > s.cols) {
    throw std::invalid_argument("ViewTransform: crop window outside the scaled image");
  }
}

Coord2 ViewTransform::to_view(Coord2 p) const {
  const Size2 s = scaled_size();
  double c = flip ? (canonical_size.cols - 1) - p.col : p.col;
  double r = p.row;
  r = (r + 0.5) * s.rows / canonical_size.rows - 0.5 - crop_origin.row;
  c = (c + 0.5) * s.cols / canonical_size.cols - 0.5 - crop_origin.col;
  r = (r + 0.5) * output_size.rows / crop_size.rows - 0.5;
  c = (c + 0.5) * output_size.cols / crop_size.cols - 0.5;
  return {r, c};
}

Coord2 ViewTransform::to_canonical(Coord2 v) const {
  const Size2 s = scaled_size();
  double r = (v.row + 0.5) * crop_size.rows / output_size.rows - 0.5 + crop_origin.row;
  double c = (v.col + 0.5) * crop_size.cols / output_size.cols - 0.5 + crop_origin.col;
  r = (r + 0.5) * canonical_size.rows / s.rows - 0.5;
  c = (c + 0.5) * canonical_size.cols / s.cols - 0.5;
  if (flip) c = (canonical_size.cols - 1) - c;
  return {r, c};
}

ViewTransform sample_view_transform(Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  ViewTransform t;
  t.canonical_size = cfg.canonical_size;
  t.crop_size = cfg.crop_size;
  t.output_size = cfg.output_size.area() == 0 ? cfg.crop_size : cfg.output_size;
  t.flip = rng.bernoulli(cfg.flip_prob);
  t.scale = cfg.scale_lo == cfg.scale_hi ? cfg.scale_lo : rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const Size2 s = t.scaled_size();
  t.crop_origin.row = static_cast<int>(rng.uniform_int(0, s.rows - t.crop_size.rows));
  t.crop_origin.col = static_cast<int>(rng.uniform_int(0, s.cols - t.crop_size.cols));
  return t;
}

ImageTensor apply_transform(const ImageTensor& img, const ViewTransform& t, Interpolation interp) {
  return resample(img, t, interp);
}

ShadowMask apply_transform(const ShadowMask& img, const ViewTransform& t, Interpolation interp) {
  return resample(img, t, interp);
}

void SamplingPlan::apply(std::span<const double> in, std::span<double> out) const {
  for (std::size_t d = 0; d < dst_.area(); ++d) {
    if (!valid_[d]) {
      out[d] = 0.0;
      continue;
    }
    const Tap& t = taps_[d];
    out[d] = t.weight[0] * in[t.index[0]] + t.weight[1] * in[t.index[1]] + t.weight[2] * in[t.index[2]] +
             t.weight[3] * in[t.index[3]];
  }
}

void SamplingPlan::apply_adjoint(std::span<const double> grad_out, std::span<double> grad_in) const {
  for (std::size_t d = 0; d < dst_.area(); ++d) {
    if (!valid_[d] || grad_out[d] == 0.0) continue;
    const Tap& t = taps_[d];
    for (int k = 0; k < 4; ++k) grad_in[t.index[k]] += t.weight[k] * grad_out[d];
  }
}

SamplingPlan canonical_plan(const ViewTransform& t) {
  t.validate();
  const Size2 dst = t.canonical_size;
  const Size2 src = t.output_size;
  std::vector<SamplingPlan::Tap> taps(dst.area());
  std::vector<std::uint8_t> valid(dst.area(), 0);
  for (int r = 0; r < dst.rows; ++r) {
    for (int c = 0; c < dst.cols; ++c) {
      const Coord2 v = t.to_view({static_cast<double>(r), static_cast<double>(c)});
      const std::size_t i = static_cast<std::size_t>(r) * dst.cols + c;
      const bool inside = v.row >= -0.5 - kEdgeTol && v.row < src.rows - 0.5 - kEdgeTol &&
                          v.col >= -0.5 - kEdgeTol && v.col < src.cols - 0.5 - kEdgeTol;
      if (!inside) continue;
      valid[i] = 1;
      taps[i] = bilinear_tap(v, src);
    }
  }
  return SamplingPlan(src, dst, std::move(taps), std::move(valid));
}

CanonicalPrediction to_canonical(const ShadowMask& pred, const ViewTransform& t) {
  if (pred.size2() != t.output_size || pred.channels() != 1) {
    throw std::invalid_argument("to_canonical: prediction is " + to_string(pred.size2()) + ", transform expects " +
                                to_string(t.output_size));
  }
  const SamplingPlan plan = canonical_plan(t);
  CanonicalPrediction out{ShadowMask(t.canonical_size), BoolMask(t.canonical_size)};
  plan.apply(pred.data(), out.values.data());
  for (std::size_t i = 0; i < t.canonical_size.area(); ++i) out.validity[i] = plan.valid(i) ? 1 : 0;
  return out;
}

ShadowMask to_canonical_backward(const ShadowMask& grad_canonical, const ViewTransform& t) {
  if (grad_canonical.size2() != t.canonical_size || grad_canonical.channels() != 1) {
    throw std::invalid_argument("to_canonical_backward: gradient shape mismatch");
  }
  const SamplingPlan plan = canonical_plan(t);
  ShadowMask grad_view(t.output_size);
  plan.apply_adjoint(grad_canonical.data(), grad_view.data());
  return grad_view;
}

IntersectionMasks intersection_masks(const CanonicalPrediction& a, const CanonicalPrediction& b, double threshold) {
  require_same_shape(a.values, b.values, "intersection_masks");
  require_same_shape(a.values, a.validity, "intersection_masks");
  require_same_shape(b.values, b.validity, "intersection_masks");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("intersection_masks: threshold outside (0,1)");
  IntersectionMasks m{BoolMask(a.values.size2()), BoolMask(a.values.size2())};
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!a.validity[i] || !b.validity[i]) continue;
    const bool fa = a.values[i] >= threshold;
    const bool fb = b.values[i] >= threshold;
    m.fg[i] = fa && fb;
    m.bg[i] = !fa && !fb;
  }
  return m;
}

}  // namespace tica
