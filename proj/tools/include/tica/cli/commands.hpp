#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tica/adapt.hpp"
#include "tica/cli/config.hpp"
#include "tica/metrics.hpp"

namespace tica::cli {

/// Fresh network for `seed`.
Model make_model(const ModelConfig& cfg, std::uint64_t seed);

struct GenDataOptions {
  std::filesystem::path out;
  std::ostream* log = nullptr;
};

struct GenDataResult {
  std::filesystem::path root;
  std::string digest;
};

GenDataResult cmd_gen_data(const RunConfig& cfg, const GenDataOptions& opts);

struct TrainOptions {
  /// Dataset root holding train/ (and test/).
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::ostream* log = nullptr;
};

struct TrainOutcome {
  std::filesystem::path checkpoint;
  std::filesystem::path trace;
  TrainResult result;
};

TrainOutcome cmd_train(const RunConfig& cfg, const TrainOptions& opts);

struct AdaptOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
  std::ostream* log = nullptr;
};

struct AdaptOutcome {
  std::filesystem::path checkpoint;
  std::filesystem::path trace;
  /// Episodic mode only: BER report of the per-image predictions.
  std::optional<std::filesystem::path> report;
  AdaptResult result;
};

AdaptOutcome cmd_adapt(const RunConfig& cfg, const AdaptOptions& opts);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::string split = "test";
  std::filesystem::path out;
  /// Score the ground truth against itself instead of a model.
  bool oracle = false;
  std::optional<std::filesystem::path> dump_masks;
  std::ostream* log = nullptr;
};

BerReport cmd_eval(const RunConfig& cfg, const EvalOptions& opts);

struct CompareOptions {
  /// Rows; subset of none, fc-only, bc-only, tica, tent, bn, eta.
  std::vector<std::string> methods{"none", "fc-only", "bc-only", "tica", "tent", "bn", "eta"};
  /// Evaluate after every epoch up to this many (0 disables the sweep).
  int epoch_sweep = 0;
  std::filesystem::path data;
  /// Holds seed_<s>.ckpt for every seed; when unset, checkpoints are trained
  /// on demand and cached under <output_root>/compare/.
  std::optional<std::filesystem::path> checkpoints;
  std::filesystem::path out;
  std::ostream* log = nullptr;
};

struct CompareCell {
  std::string method;
  std::uint64_t seed = 0;
  double ber = 0.0;
  double ber_shadow = 0.0;
  double ber_nonshadow = 0.0;
  /// BER after epochs 1..epoch_sweep.
  std::vector<double> curve;
  double seconds = 0.0;
};

struct CompareTable {
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  int epoch_sweep = 0;
  std::string config_hash;
  std::vector<CompareCell> cells;

  const CompareCell& cell(const std::string& method, std::uint64_t seed) const;
  double mean_ber(const std::string& method) const;
};

/// Known row names in request order; duplicates are dropped with a warning
/// on `log`, unknown names are errors.
std::vector<std::string> normalize_methods(const std::vector<std::string>& requested, std::ostream* log);
/// Adaptation settings for a comparison row.
AdaptConfig row_config(const AdaptConfig& base, const std::string& row);

CompareTable cmd_compare(const RunConfig& cfg, const CompareOptions& opts);

std::string compare_to_json(const CompareTable& t, const RunConfig& cfg);
CompareTable compare_from_json(const std::string& text);
/// Aligned plain-text table with BER x 100.
std::string render_compare(const CompareTable& t);
std::string render_report(const BerReport& r);

}  // namespace tica::cli
