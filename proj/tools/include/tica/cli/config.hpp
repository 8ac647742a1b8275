#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tica/adapt.hpp"
#include "tica/data.hpp"
#include "tica/model.hpp"

namespace tica::cli {

/// Everything a command needs, resolved from defaults, an optional JSON
/// config file, the TICA_OUTPUT_ROOT environment variable and flags, in that
/// order of increasing precedence.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AdaptConfig adapt;
  SynthConfig data;
  double eval_threshold = 0.5;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path output_root = "runs";

  void validate() const;
};

inline constexpr const char* kOutputRootEnv = "TICA_OUTPUT_ROOT";

/// Pretty JSON with every field. Paths are omitted when `with_paths` is false.
std::string config_to_json(const RunConfig& cfg, bool with_paths = true);
/// Overlays the keys present in `text` onto `base`; unknown keys are errors.
RunConfig config_from_json(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

/// "section.key=value" or "key=value" for top-level keys; the value is parsed
/// as JSON, falling back to a plain string.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// SHA-256 of the compact path-free JSON form.
std::string config_hash(const RunConfig& cfg);

}  // namespace tica::cli
