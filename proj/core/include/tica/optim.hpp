#pragma once

#include <cstdint>
#include <vector>

#include "tica/model.hpp"

namespace tica {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW) weight decay; 0 gives plain Adam.
  double weight_decay = 0.0;
  /// Global gradient-norm clip over the in-scope tensors; 0 disables it.
  double grad_clip = 0.0;

  void validate() const;
};

/// Adam / AdamW over the tensors of a ParamStore selected by an UpdateScope.
/// Tensors outside the scope are never written.
class Adam {
 public:
  Adam(const ParamStore<float>& store, const AdamConfig& cfg, UpdateScope scope);

  /// One update with the configured learning rate.
  void step(ParamStore<float>& store) { step(store, cfg_.lr); }
  /// One update with an explicit learning rate (for schedules).
  void step(ParamStore<float>& store, double lr);

  std::uint64_t step_count() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  UpdateScope scope() const noexcept { return scope_; }

  /// Moment buffers, one per parameter tensor of the store (empty when the
  /// tensor is out of scope).
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }
  void restore(std::uint64_t step, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  AdamConfig cfg_;
  UpdateScope scope_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Cosine decay from `base` at step 0 to 0 at `total_steps`.
double cosine_lr(double base, std::uint64_t step, std::uint64_t total_steps) noexcept;

}  // namespace tica
