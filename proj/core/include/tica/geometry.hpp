#pragma once

#include <utility>
#include <vector>

#include "tica/image.hpp"
#include "tica/random.hpp"

namespace tica {

struct Point2 {
  int row = 0;
  int col = 0;
  bool operator==(const Point2&) const = default;
};

/// Continuous pixel coordinate; integer values are pixel centers.
struct Coord2 {
  double row = 0.0;
  double col = 0.0;
};

struct AugmentConfig {
  double flip_prob = 0.5;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  Size2 canonical_size;
  Size2 crop_size;
  /// Size every view is resampled to after cropping (the model input size).
  /// Zero means "keep the crop size".
  Size2 output_size;

  /// flip 0.5, scale [0.8, 1.2], crop 0.75 of the canonical size per axis,
  /// views resized back to the canonical size.
  static AugmentConfig defaults(Size2 canonical);
  void validate() const;
};

/// One sampled augmentation: flip -> resize -> crop -> resize to output.
/// The record is sufficient to invert the mapping exactly.
struct ViewTransform {
  bool flip = false;
  double scale = 1.0;
  Point2 crop_origin;
  Size2 crop_size;
  Size2 canonical_size;
  Size2 output_size;

  static ViewTransform identity(Size2 canonical);

  /// floor(canonical_size * scale) per axis.
  Size2 scaled_size() const;
  void validate() const;

  /// Canonical pixel coordinate -> view (output) coordinate.
  Coord2 to_view(Coord2 canonical) const;
  /// View (output) coordinate -> canonical pixel coordinate.
  Coord2 to_canonical(Coord2 view) const;

  bool operator==(const ViewTransform&) const = default;
};

enum class Interpolation { Bilinear, Nearest };

ViewTransform sample_view_transform(Rng& rng, const AugmentConfig& cfg);

/// Resamples `img` (canonical size) into the view frame.
ImageTensor apply_transform(const ImageTensor& img, const ViewTransform& t,
                            Interpolation interp = Interpolation::Bilinear);
ShadowMask apply_transform(const ShadowMask& img, const ViewTransform& t,
                           Interpolation interp = Interpolation::Bilinear);

struct CanonicalPrediction {
  ShadowMask values;
  BoolMask validity;
};

/// Fixed linear resampling stencil from one grid into another. Each
/// destination pixel reads at most four source taps; invalid destinations
/// read nothing.
class SamplingPlan {
 public:
  struct Tap {
    int index[4];
    double weight[4];
  };

  SamplingPlan() = default;
  SamplingPlan(Size2 src, Size2 dst, std::vector<Tap> taps, std::vector<std::uint8_t> valid)
      : src_(src), dst_(dst), taps_(std::move(taps)), valid_(std::move(valid)) {}

  Size2 src() const noexcept { return src_; }
  Size2 dst() const noexcept { return dst_; }
  bool valid(std::size_t i) const noexcept { return valid_[i] != 0; }
  const Tap& tap(std::size_t i) const noexcept { return taps_[i]; }

  /// out[d] = sum_k w_k in[idx_k] on valid destinations, 0 elsewhere.
  void apply(std::span<const double> in, std::span<double> out) const;
  /// Adjoint of apply(): accumulates into `grad_in`.
  void apply_adjoint(std::span<const double> grad_out, std::span<double> grad_in) const;

 private:
  Size2 src_;
  Size2 dst_;
  std::vector<Tap> taps_;
  std::vector<std::uint8_t> valid_;
};

/// Plan mapping a view-frame prediction onto the canonical grid.
SamplingPlan canonical_plan(const ViewTransform& t);

/// Inverse-maps a view-frame prediction into the canonical frame.
CanonicalPrediction to_canonical(const ShadowMask& pred, const ViewTransform& t);
/// Gradient of a canonical-frame loss with respect to the view-frame prediction.
ShadowMask to_canonical_backward(const ShadowMask& grad_canonical, const ViewTransform& t);

struct IntersectionMasks {
  BoolMask fg;
  BoolMask bg;
};

IntersectionMasks intersection_masks(const CanonicalPrediction& a, const CanonicalPrediction& b,
                                     double threshold = 0.5);

}  // namespace tica
