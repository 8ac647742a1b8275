#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tica/data.hpp"
#include "tica/image.hpp"
#include "tica/model.hpp"

namespace tica {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept;
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) noexcept;

/// Adds the tallies of (pred >= threshold) against the binary `gt`.
ConfusionCounts accumulate(const ShadowMask& pred, const ShadowMask& gt, double threshold = 0.5,
                           ConfusionCounts acc = {});

struct BerReport {
  double ber = 0.0;
  double ber_shadow = 0.0;
  double ber_nonshadow = 0.0;
  ConfusionCounts counts;
  /// Set when TP + FN = 0 (resp. TN + FP = 0); that class then has recall 1.
  bool shadow_degenerate = false;
  bool nonshadow_degenerate = false;

  std::string method;
  std::string config_hash;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  std::vector<std::string> image_ids;
  std::vector<double> per_image_ber;
};

BerReport ber(const ConfusionCounts& c);

/// Pooled BER over all pixels of the predictions plus per-image values.
BerReport evaluate_predictions(std::span<const ShadowMask> preds, std::span<const SamplePair> data,
                               double threshold = 0.5);
/// Eval-mode predictions of `model` scored against `data`.
BerReport evaluate(const Model& model, std::span<const SamplePair> data, double threshold = 0.5);

std::string report_to_json(const BerReport& r);
BerReport report_from_json(const std::string& text);

}  // namespace tica
