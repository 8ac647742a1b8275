#include "tica/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tica {
namespace {

double clamp_prob(double p) noexcept { return std::clamp(p, kLogEps, 1.0 - kLogEps); }

// derivative of the clamp: gradients stop where the clamp is active
double clamp_slope(double p) noexcept { return (p > kLogEps && p < 1.0 - kLogEps) ? 1.0 : 0.0; }

struct KlGrad {
  double value;
  double d_first;
  double d_second;
};

KlGrad kl_with_grad(double p, double q) noexcept {
  const double pc = clamp_prob(p);
  const double qc = clamp_prob(q);
  KlGrad g;
  g.value = pc * std::log(pc / qc) + (1.0 - pc) * std::log((1.0 - pc) / (1.0 - qc));
  g.d_first = (std::log(pc / qc) - std::log((1.0 - pc) / (1.0 - qc))) * clamp_slope(p);
  g.d_second = (-pc / qc + (1.0 - pc) / (1.0 - qc)) * clamp_slope(q);
  return g;
}

KlGrad divergence(double a, double b, KlMode mode) noexcept {
  switch (mode) {
    case KlMode::Fwd:
      return kl_with_grad(a, b);
    case KlMode::Rev: {
      const KlGrad r = kl_with_grad(b, a);
      return {r.value, r.d_second, r.d_first};
    }
    case KlMode::Sym:
    default: {
      const KlGrad f = kl_with_grad(a, b);
      const KlGrad r = kl_with_grad(b, a);
      return {0.5 * (f.value + r.value), 0.5 * (f.d_first + r.d_second), 0.5 * (f.d_second + r.d_first)};
    }
  }
}

void check_region(const CanonicalPrediction& y1, const CanonicalPrediction& y2, const BoolMask& mask,
                  const char* what) {
  require_same_shape(y1.values, y2.values, what);
  require_same_shape(y1.values, mask, what);
  require_same_shape(y1.values, y1.validity, what);
  require_same_shape(y2.values, y2.validity, what);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && !(y1.validity[i] && y2.validity[i])) {
      throw std::invalid_argument(std::string(what) + ": region mask leaves the joint validity region");
    }
  }
}

// Shared kernel for the foreground and background terms. With `complement`
// the divergence is taken between 1 - y1 and 1 - y2 and the chain rule flips
// the sign of both gradients.
LossValue consistency(const CanonicalPrediction& y1, const CanonicalPrediction& y2, const BoolMask& mask,
                      const ConsistencyOptions& opts, bool complement) {
  LossValue out;
  out.grad_y1 = ShadowMask(y1.values.size2());
  out.grad_y2 = ShadowMask(y1.values.size2());
  for (std::size_t i = 0; i < mask.size(); ++i) out.pixel_count += mask[i] ? 1 : 0;
  if (out.pixel_count == 0) return out;

  const double inv_n = 1.0 / static_cast<double>(out.pixel_count);
  const double sign = complement ? -1.0 : 1.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double a = complement ? 1.0 - y1.values[i] : y1.values[i];
    const double b = complement ? 1.0 - y2.values[i] : y2.values[i];
    const KlGrad d = divergence(a, b, opts.kl_mode);
    sum += d.value;
    out.grad_y1[i] = sign * d.d_first * inv_n;
    out.grad_y2[i] = opts.detach_target ? 0.0 : sign * d.d_second * inv_n;
  }
  out.value = sum * inv_n;
  return out;
}

}  // namespace

void LossWeights::validate() const {
  if (!(std::isfinite(lambda_fg) && lambda_fg >= 0.0 && std::isfinite(lambda_bg) && lambda_bg >= 0.0)) {
    throw std::invalid_argument("LossWeights: lambdas must be finite and non-negative");
  }
}

const char* to_string(KlMode m) noexcept {
  switch (m) {
    case KlMode::Sym: return "sym";
    case KlMode::Fwd: return "fwd";
    case KlMode::Rev: return "rev";
  }
  return "?";
}

KlMode parse_kl_mode(const std::string& s) {
  if (s == "sym") return KlMode::Sym;
  if (s == "fwd") return KlMode::Fwd;
  if (s == "rev") return KlMode::Rev;
  throw std::invalid_argument("unknown kl mode '" + s + "' (expected sym, fwd or rev)");
}

LossValue bbce(const ShadowMask& pred, const ShadowMask& gt, BbceWeighting weighting) {
  require_same_shape(pred, gt, "bbce");
  if (pred.empty()) throw std::invalid_argument("bbce: empty image");
  std::size_t np = 0;
  for (double v : gt.data()) {
    if (v == 1.0) {
      ++np;
    } else if (v != 0.0) {
      throw std::invalid_argument("bbce: ground truth must be binary");
    }
  }
  const double n = static_cast<double>(gt.size());
  const double nn = n - static_cast<double>(np);
  const double wp = weighting == BbceWeighting::InverseFrequency ? nn / n : np / n;
  const double wn = weighting == BbceWeighting::InverseFrequency ? np / n : nn / n;

  LossValue out;
  out.grad_y1 = ShadowMask(pred.size2());
  out.pixel_count = pred.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = clamp_prob(pred[i]);
    if (gt[i] == 1.0) {
      sum -= wp * std::log(p);
      out.grad_y1[i] = -wp / p * clamp_slope(pred[i]);
    } else {
      sum -= wn * std::log(1.0 - p);
      out.grad_y1[i] = wn / (1.0 - p) * clamp_slope(pred[i]);
    }
  }
  out.value = sum;
  return out;
}

double bernoulli_kl(double p, double q) noexcept { return kl_with_grad(p, q).value; }

double symmetric_kl(double a, double b) noexcept { return 0.5 * (bernoulli_kl(a, b) + bernoulli_kl(b, a)); }

LossValue fc_loss(const CanonicalPrediction& y1, const CanonicalPrediction& y2, const BoolMask& fg_mask,
                  const ConsistencyOptions& opts) {
  check_region(y1, y2, fg_mask, "fc_loss");
  return consistency(y1, y2, fg_mask, opts, false);
}

LossValue bc_loss(const CanonicalPrediction& y1, const CanonicalPrediction& y2, const BoolMask& bg_mask,
                  const ConsistencyOptions& opts) {
  check_region(y1, y2, bg_mask, "bc_loss");
  return consistency(y1, y2, bg_mask, opts, true);
}

TicaLoss tica_loss(const CanonicalPrediction& y1, const CanonicalPrediction& y2, const LossWeights& w,
                   double threshold, const ConsistencyOptions& opts) {
  w.validate();
  const IntersectionMasks masks = intersection_masks(y1, y2, threshold);
  const LossValue fg = consistency(y1, y2, masks.fg, opts, false);
  const LossValue bg = consistency(y1, y2, masks.bg, opts, true);

  TicaLoss out;
  out.fg_value = fg.value;
  out.bg_value = bg.value;
  out.fg_pixels = fg.pixel_count;
  out.bg_pixels = bg.pixel_count;
  out.total.value = w.lambda_fg * fg.value + w.lambda_bg * bg.value;
  out.total.pixel_count = fg.pixel_count + bg.pixel_count;
  out.total.grad_y1 = ShadowMask(y1.values.size2());
  out.total.grad_y2 = ShadowMask(y1.values.size2());
  // fg and bg regions are disjoint, so each pixel receives at most one term
  for (std::size_t i = 0; i < y1.values.size(); ++i) {
    out.total.grad_y1[i] = w.lambda_fg * fg.grad_y1[i] + w.lambda_bg * bg.grad_y1[i];
    out.total.grad_y2[i] = w.lambda_fg * fg.grad_y2[i] + w.lambda_bg * bg.grad_y2[i];
  }
  return out;
}

double binary_entropy(double p) noexcept {
  const double pc = clamp_prob(p);
  return -(pc * std::log(pc) + (1.0 - pc) * std::log(1.0 - pc));
}

LossValue entropy_loss(const ShadowMask& pred) {
  if (pred.empty()) throw std::invalid_argument("entropy_loss: empty prediction");
  LossValue out;
  out.grad_y1 = ShadowMask(pred.size2());
  out.pixel_count = pred.size();
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = clamp_prob(pred[i]);
    sum += -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
    out.grad_y1[i] = std::log((1.0 - p) / p) * clamp_slope(pred[i]) * inv_n;
  }
  out.value = sum * inv_n;
  return out;
}

}  // namespace tica
