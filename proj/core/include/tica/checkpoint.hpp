#pragma once

// Checkpoint container:
//   bytes 0..7   magic "TICACKPT"
//   u32          format version
//   u64          header length L
//   L bytes      JSON header: architecture, metadata and a tensor table
//                (name, role, group, kind, dtype, shape, byte offset)
//   payload      raw little-endian tensor data at the recorded offsets

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tica/model.hpp"
#include "tica/optim.hpp"

namespace tica {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  /// Optimizer steps taken during supervised training.
  std::uint64_t train_step = 0;
  /// Producer of the checkpoint ("train", "tica", "tent", ...).
  std::string method;
  std::uint64_t seed = 0;
  /// Resolved run configuration (JSON text) and its hash, for provenance.
  std::string config_json;
  std::string config_hash;

  bool operator==(const CheckpointMeta&) const = default;
};

struct OptimizerSnapshot {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
  std::optional<OptimizerSnapshot> optimizer;
};

std::string serialize_checkpoint(const Model& model, const CheckpointMeta& meta, const Adam* optimizer = nullptr);
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta,
                     const Adam* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Bitwise equality of learnable tensors.
bool same_parameters(const Model& a, const Model& b);
/// Bitwise equality of normalization running statistics.
bool same_states(const Model& a, const Model& b);
/// Names of learnable tensors whose bits differ.
std::vector<std::string> changed_parameters(const Model& before, const Model& after);

}  // namespace tica
