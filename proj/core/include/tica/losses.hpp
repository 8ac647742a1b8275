#pragma once

#include <cstddef>
#include <string>

#include "tica/geometry.hpp"
#include "tica/image.hpp"

namespace tica {

/// Clamp applied to every probability before a logarithm.
inline constexpr double kLogEps = 1e-7;

/// Loss value in nats plus gradients with respect to each prediction.
/// Single-input losses leave grad_y2 empty.
struct LossValue {
  double value = 0.0;
  ShadowMask grad_y1;
  ShadowMask grad_y2;
  std::size_t pixel_count = 0;
};

struct LossWeights {
  double lambda_fg = 0.5;
  double lambda_bg = 1.0;
  void validate() const;
};

enum class BbceWeighting {
  InverseFrequency,  // positives weighted N_n/N, negatives N_p/N
  Literal,           // positives weighted N_p/N, negatives N_n/N
};

/// Direction of the per-pixel Bernoulli KL used by the consistency terms.
enum class KlMode { Sym, Fwd, Rev };

const char* to_string(KlMode m) noexcept;
KlMode parse_kl_mode(const std::string& s);

struct ConsistencyOptions {
  KlMode kl_mode = KlMode::Sym;
  /// Treat the second view as a constant target (no gradient into y2).
  bool detach_target = false;
};

/// Balanced BCE for one image, summed over pixels.
LossValue bbce(const ShadowMask& pred, const ShadowMask& gt,
               BbceWeighting weighting = BbceWeighting::InverseFrequency);

/// KL(Bern(p) || Bern(q)) with both arguments clamped to [eps, 1 - eps].
double bernoulli_kl(double p, double q) noexcept;
/// 0.5 * (KL(a||b) + KL(b||a)).
double symmetric_kl(double a, double b) noexcept;

/// Mean per-pixel consistency divergence over `fg_mask`.
LossValue fc_loss(const CanonicalPrediction& y1, const CanonicalPrediction& y2, const BoolMask& fg_mask,
                  const ConsistencyOptions& opts = {});
/// fc_loss applied to the complements 1 - y1, 1 - y2 over `bg_mask`.
LossValue bc_loss(const CanonicalPrediction& y1, const CanonicalPrediction& y2, const BoolMask& bg_mask,
                  const ConsistencyOptions& opts = {});

struct TicaLoss {
  LossValue total;
  double fg_value = 0.0;
  double bg_value = 0.0;
  std::size_t fg_pixels = 0;
  std::size_t bg_pixels = 0;
};

/// lambda_fg * fc_loss + lambda_bg * bc_loss over the binarized intersections.
TicaLoss tica_loss(const CanonicalPrediction& y1, const CanonicalPrediction& y2, const LossWeights& w,
                   double threshold = 0.5, const ConsistencyOptions& opts = {});

/// Mean binary entropy of the prediction.
LossValue entropy_loss(const ShadowMask& pred);

double binary_entropy(double p) noexcept;

}  // namespace tica
