#include "tica/metrics.hpp"

#include <stdexcept>

#include "json.hpp"

namespace tica {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) noexcept {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) noexcept { return a += b; }

ConfusionCounts accumulate(const ShadowMask& pred, const ShadowMask& gt, double threshold, ConfusionCounts acc) {
  require_same_shape(pred, gt, "accumulate");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    if (gt[i] == 1.0) {
      p ? ++acc.tp : ++acc.fn;
    } else if (gt[i] == 0.0) {
      p ? ++acc.fp : ++acc.tn;
    } else {
      throw std::invalid_argument("accumulate: ground truth must be binary");
    }
  }
  return acc;
}

BerReport ber(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("ber: no pixels counted");
  BerReport r;
  r.counts = c;
  const std::uint64_t pos = c.tp + c.fn;
  const std::uint64_t neg = c.tn + c.fp;
  r.shadow_degenerate = pos == 0;
  r.nonshadow_degenerate = neg == 0;
  const double recall_pos = pos == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(pos);
  const double recall_neg = neg == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(neg);
  r.ber_shadow = 1.0 - recall_pos;
  r.ber_nonshadow = 1.0 - recall_neg;
  r.ber = 1.0 - 0.5 * (recall_pos + recall_neg);
  return r;
}

BerReport evaluate_predictions(std::span<const ShadowMask> preds, std::span<const SamplePair> data,
                               double threshold) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (preds.size() != data.size()) throw std::invalid_argument("evaluate: prediction count does not match dataset");
  ConfusionCounts pooled;
  std::vector<double> per_image;
  std::vector<std::string> ids;
  per_image.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ConfusionCounts c = accumulate(preds[i], data[i].mask, threshold);
    per_image.push_back(ber(c).ber);
    ids.push_back(data[i].id);
    pooled += c;
  }
  BerReport r = ber(pooled);
  r.threshold = threshold;
  r.per_image_ber = std::move(per_image);
  r.image_ids = std::move(ids);
  return r;
}

BerReport evaluate(const Model& model, std::span<const SamplePair> data, double threshold) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  for (const auto& p : data) {
    if (p.image.size2() != model.config().input_size) {
      throw std::invalid_argument("evaluate: sample " + p.id + " is " + to_string(p.image.size2()) +
                                  ", model expects " + to_string(model.config().input_size));
    }
  }
  const std::vector<ImageTensor> images = images_of(data);
  const std::vector<ShadowMask> preds = predict(model, images);
  return evaluate_predictions(preds, data, threshold);
}

std::string report_to_json(const BerReport& r) {
  nlohmann::json j{{"ber", r.ber},
                   {"ber_shadow", r.ber_shadow},
                   {"ber_nonshadow", r.ber_nonshadow},
                   {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}}},
                   {"shadow_degenerate", r.shadow_degenerate},
                   {"nonshadow_degenerate", r.nonshadow_degenerate},
                   {"method", r.method},
                   {"config_hash", r.config_hash},
                   {"seed", r.seed},
                   {"threshold", r.threshold},
                   {"per_image", nlohmann::json::array()}};
  for (std::size_t i = 0; i < r.per_image_ber.size(); ++i) {
    j["per_image"].push_back({{"id", i < r.image_ids.size() ? r.image_ids[i] : std::string()},
                              {"ber", r.per_image_ber[i]}});
  }
  return j.dump(2);
}

BerReport report_from_json(const std::string& text) {
  BerReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.ber = j.at("ber").get<double>();
    r.ber_shadow = j.at("ber_shadow").get<double>();
    r.ber_nonshadow = j.at("ber_nonshadow").get<double>();
    const auto& c = j.at("counts");
    r.counts = {c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>(),
                c.at("fn").get<std::uint64_t>()};
    r.shadow_degenerate = j.at("shadow_degenerate").get<bool>();
    r.nonshadow_degenerate = j.at("nonshadow_degenerate").get<bool>();
    r.method = j.at("method").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.threshold = j.at("threshold").get<double>();
    for (const auto& e : j.at("per_image")) {
      r.image_ids.push_back(e.at("id").get<std::string>());
      r.per_image_ber.push_back(e.at("ber").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("report_from_json: ") + e.what());
  }
  return r;
}

}  // namespace tica
