#include "tica/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tica {

void AdamConfig::validate() const {
  if (!(std::isfinite(lr) && lr >= 0.0)) throw std::invalid_argument("AdamConfig: lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("AdamConfig: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("AdamConfig: eps must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("AdamConfig: weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("AdamConfig: grad_clip must be >= 0");
}

Adam::Adam(const ParamStore<float>& store, const AdamConfig& cfg, UpdateScope scope) : cfg_(cfg), scope_(scope) {
  cfg_.validate();
  const auto& params = store.params();
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!in_scope(scope_, params[i].group, params[i].kind)) continue;
    m_[i].assign(params[i].value.size(), 0.0);
    v_[i].assign(params[i].value.size(), 0.0);
  }
}

void Adam::restore(std::uint64_t step, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("Adam::restore: tensor count mismatch");
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
      throw std::invalid_argument("Adam::restore: moment shape mismatch at tensor " + std::to_string(i));
    }
  }
  t_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

void Adam::step(ParamStore<float>& store, double lr) {
  if (!(std::isfinite(lr) && lr >= 0.0)) throw std::invalid_argument("Adam::step: invalid learning rate");
  auto& params = store.params();
  if (params.size() != m_.size()) throw std::invalid_argument("Adam::step: store does not match optimizer");

  double clip_scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (m_[i].empty()) continue;
      for (float g : params[i].grad) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].empty()) continue;
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = static_cast<double>(p.grad[k]) * clip_scale;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      double w = static_cast<double>(p.value[k]);
      if (cfg_.weight_decay > 0.0) w *= decay;
      p.value[k] = static_cast<float>(w - lr * update);
    }
  }
  store.bump_version();
}

double cosine_lr(double base, std::uint64_t step, std::uint64_t total_steps) noexcept {
  if (total_steps == 0 || step >= total_steps) return step >= total_steps && total_steps > 0 ? 0.0 : base;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace tica
