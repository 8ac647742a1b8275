#include "tica/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tica/geometry.hpp"

namespace tica {
namespace {

void require_input_size(const Model& model, const ImageTensor& img, const char* what) {
  if (img.size2() != model.config().input_size || img.channels() != model.config().in_channels) {
    throw std::invalid_argument(std::string(what) + ": image is " + to_string(img.size2()) + "x" +
                                std::to_string(img.channels()) + ", model expects " +
                                to_string(model.config().input_size) + "x" +
                                std::to_string(model.config().in_channels));
  }
}

AugmentConfig view_config(const Model& model) { return AugmentConfig::defaults(model.config().input_size); }

void put_gradient(Tensor4<float>& g, int index, const ShadowMask& grad, double scale) {
  float* dst = g.image(index);
  for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += static_cast<float>(grad[i] * scale);
}

void check_finite(double loss, const char* method, int epoch, int batch) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << method << ": non-finite loss " << loss << " at epoch " << epoch << ", batch " << batch;
    throw std::runtime_error(os.str());
  }
}

ForwardOptions adapt_forward_options(const AdaptConfig& cfg) {
  if (cfg.eval_stats) return {false, false, -1.0};
  return ForwardOptions::for_mode(Mode::Train);
}

struct Runner {
  const AdaptConfig& cfg;
  Model& model;
  std::optional<Adam> opt;

  Runner(const AdaptConfig& c, Model& m) : cfg(c), model(m) {
    const UpdateScope scope = cfg.scope();
    if (cfg.method != AdaptMethod::Bn && cfg.method != AdaptMethod::None && scope != UpdateScope::None) {
      AdamConfig ac;
      ac.lr = cfg.lr;
      ac.grad_clip = cfg.grad_clip;
      opt.emplace(model.store(), ac, scope);
    }
  }

  void apply_step(const ForwardCache<float>& cache, const Tensor4<float>& grad) {
    model.store().zero_grad();
    model.backward(cache, grad);
    if (opt) opt->step(model.store());
  }

  AdaptStep tica_batch(std::span<const ImageTensor> batch, Rng& rng, int epoch, int index) {
    const int b = static_cast<int>(batch.size());
    const AugmentConfig aug = view_config(model);
    std::vector<ViewTransform> ts;
    std::vector<ImageTensor> views;
    ts.reserve(2 * b);
    views.reserve(2 * b);
    for (int i = 0; i < b; ++i) {
      for (int v = 0; v < 2; ++v) {
        ts.push_back(sample_view_transform(rng, aug));
        views.push_back(apply_transform(batch[i], ts.back(), Interpolation::Bilinear));
      }
    }
    const auto input = make_batch<float>(views);
    const auto cache = model.forward(input, adapt_forward_options(cfg));
    Tensor4<float> grad(cache.probs.n, cache.probs.h, cache.probs.w, 1);
    const ConsistencyOptions copts{cfg.kl_mode, cfg.detach_target};
    AdaptStep rec{epoch, index, "tica", 0.0, 0.0, 0.0, b};
    for (int i = 0; i < b; ++i) {
      const CanonicalPrediction c1 = to_canonical(mask_from_batch(cache.probs, 2 * i), ts[2 * i]);
      const CanonicalPrediction c2 = to_canonical(mask_from_batch(cache.probs, 2 * i + 1), ts[2 * i + 1]);
      const TicaLoss l = tica_loss(c1, c2, cfg.weights, cfg.threshold, copts);
      rec.loss += l.total.value / b;
      rec.fg += l.fg_value / b;
      rec.bg += l.bg_value / b;
      put_gradient(grad, 2 * i, to_canonical_backward(l.total.grad_y1, ts[2 * i]), 1.0 / b);
      put_gradient(grad, 2 * i + 1, to_canonical_backward(l.total.grad_y2, ts[2 * i + 1]), 1.0 / b);
    }
    check_finite(rec.loss, "adapt_tica", epoch, index);
    apply_step(cache, grad);
    return rec;
  }

  // TENT when `entropy_threshold` is infinite, ETA otherwise.
  AdaptStep entropy_batch(std::span<const ImageTensor> batch, double entropy_threshold, const char* name, int epoch,
                          int index) {
    const int b = static_cast<int>(batch.size());
    const auto input = make_batch<float>(batch);
    const auto cache = model.forward(input, adapt_forward_options(cfg));
    Tensor4<float> grad(cache.probs.n, cache.probs.h, cache.probs.w, 1);
    AdaptStep rec{epoch, index, name, 0.0, 0.0, 0.0, 0};
    for (int i = 0; i < b; ++i) {
      const LossValue l = entropy_loss(mask_from_batch(cache.probs, i));
      if (!(l.value < entropy_threshold)) continue;
      ++rec.selected;
      rec.loss += l.value / b;
      put_gradient(grad, i, l.grad_y1, 1.0 / b);
    }
    check_finite(rec.loss, name, epoch, index);
    if (rec.selected > 0) apply_step(cache, grad);
    return rec;
  }

  AdaptStep bn_batch(std::span<const ImageTensor> batch, int batch_index, int epoch) {
    ForwardOptions o = ForwardOptions::for_mode(Mode::Train);
    o.momentum = 1.0 / (batch_index + 1);  // cumulative average over the pass
    const auto input = make_batch<float>(batch);
    model.forward(input, o);
    return AdaptStep{epoch, batch_index, "bn", 0.0, 0.0, 0.0, static_cast<int>(batch.size())};
  }

  void run(std::span<const ImageTensor> images, AdaptResult& out, const EpochHook& hook) {
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int e = 0; e < cfg.epochs; ++e) {
      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
      int index = 0;
      for (std::size_t start = 0; start < images.size(); start += bs, ++index) {
        const auto batch = images.subspan(start, std::min(bs, images.size() - start));
        switch (cfg.method) {
          case AdaptMethod::Tica:
            out.trace.push_back(tica_batch(batch, rng, e, index));
            break;
          case AdaptMethod::Tent:
            out.trace.push_back(entropy_batch(batch, std::numeric_limits<double>::infinity(), "tent", e, index));
            break;
          case AdaptMethod::Eta:
            out.trace.push_back(entropy_batch(batch, cfg.eta_entropy_threshold, "eta", e, index));
            break;
          case AdaptMethod::Bn:
            out.trace.push_back(bn_batch(batch, index, e));
            break;
          case AdaptMethod::None:
            break;
        }
      }
      if (hook) hook(e + 1, model);
    }
  }
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(std::isfinite(lr) && lr >= 0.0)) throw std::invalid_argument("TrainConfig: lr must be finite and >= 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("TrainConfig: grad_clip must be >= 0");
}

TrainResult train_supervised(Model& model, std::span<const SamplePair> data, const TrainConfig& cfg) {
  TrainState state;
  return train_supervised(model, data, cfg, state);
}

TrainResult train_supervised(Model& model, std::span<const SamplePair> data, const TrainConfig& cfg,
                             TrainState& state) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_supervised: empty dataset");
  for (const auto& p : data) require_input_size(model, p.image, "train_supervised");

  const std::size_t n = data.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::uint64_t steps_per_epoch = (n + bs - 1) / bs;
  const std::uint64_t total_steps = steps_per_epoch * static_cast<std::uint64_t>(cfg.epochs);
  if (state.step % steps_per_epoch != 0) {
    throw std::invalid_argument("train_supervised: can only resume at an epoch boundary (step " +
                                std::to_string(state.step) + ")");
  }
  if (!state.optimizer) {
    AdamConfig ac;
    ac.lr = cfg.lr;
    ac.weight_decay = cfg.weight_decay;
    ac.grad_clip = cfg.grad_clip;
    state.optimizer.emplace(model.store(), ac, UpdateScope::All);
  }
  Adam& opt = *state.optimizer;
  const AugmentConfig aug = view_config(model);

  TrainResult result;
  const int first_epoch = static_cast<int>(state.step / steps_per_epoch);
  for (int e = first_epoch; e < cfg.epochs; ++e) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double epoch_sum = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < n; start += bs, ++batch_index) {
      const std::size_t count = std::min(bs, n - start);
      std::vector<ImageTensor> images;
      std::vector<ShadowMask> masks;
      for (std::size_t k = 0; k < count; ++k) {
        const SamplePair& p = data[order[start + k]];
        if (cfg.augment) {
          const ViewTransform t = sample_view_transform(rng, aug);
          images.push_back(apply_transform(p.image, t, Interpolation::Bilinear));
          masks.push_back(apply_transform(p.mask, t, Interpolation::Nearest));
        } else {
          images.push_back(p.image);
          masks.push_back(p.mask);
        }
      }
      const auto input = make_batch<float>(images);
      const auto cache = model.forward(input, Mode::Train);
      Tensor4<float> grad(cache.probs.n, cache.probs.h, cache.probs.w, 1);
      double loss = 0.0;
      for (std::size_t k = 0; k < count; ++k) {
        const LossValue l = bbce(mask_from_batch(cache.probs, static_cast<int>(k)), masks[k], cfg.weighting);
        loss += l.value / static_cast<double>(count);
        put_gradient(grad, static_cast<int>(k), l.grad_y1, 1.0 / static_cast<double>(count));
      }
      check_finite(loss, "train_supervised", e, batch_index);
      const double lr = cfg.cosine ? cosine_lr(cfg.lr, state.step, total_steps) : cfg.lr;
      model.store().zero_grad();
      model.backward(cache, grad);
      opt.step(model.store(), lr);
      result.trace.push_back({e, batch_index, state.step, lr, loss});
      ++state.step;
      epoch_sum += loss;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
  }
  return result;
}

const char* to_string(AdaptMethod m) noexcept {
  switch (m) {
    case AdaptMethod::None: return "none";
    case AdaptMethod::Tica: return "tica";
    case AdaptMethod::Tent: return "tent";
    case AdaptMethod::Bn: return "bn";
    case AdaptMethod::Eta: return "eta";
  }
  return "?";
}

AdaptMethod parse_adapt_method(const std::string& s) {
  for (AdaptMethod m : {AdaptMethod::None, AdaptMethod::Tica, AdaptMethod::Tent, AdaptMethod::Bn, AdaptMethod::Eta}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown adaptation method '" + s + "' (expected none, tica, tent, bn or eta)");
}

const char* to_string(AdaptMode m) noexcept { return m == AdaptMode::Continual ? "continual" : "episodic"; }

AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "continual") return AdaptMode::Continual;
  if (s == "episodic") return AdaptMode::Episodic;
  throw std::invalid_argument("unknown adaptation mode '" + s + "' (expected continual or episodic)");
}

UpdateScope default_scope(AdaptMethod m) noexcept {
  switch (m) {
    case AdaptMethod::Tica: return UpdateScope::Encoder;
    case AdaptMethod::Tent:
    case AdaptMethod::Eta: return UpdateScope::NormAffine;
    case AdaptMethod::Bn:
    case AdaptMethod::None: return UpdateScope::None;
  }
  return UpdateScope::None;
}

void AdaptConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("AdaptConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("AdaptConfig: batch_size must be >= 1");
  if (!(std::isfinite(lr) && lr >= 0.0)) throw std::invalid_argument("AdaptConfig: lr must be finite and >= 0");
  weights.validate();
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("AdaptConfig: threshold must lie in (0, 1)");
  if (std::isnan(eta_entropy_threshold)) throw std::invalid_argument("AdaptConfig: eta_entropy_threshold is NaN");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("AdaptConfig: grad_clip must be >= 0");
}

AdaptResult adapt(Model& model, std::span<const ImageTensor> images, const AdaptConfig& cfg, const EpochHook& hook) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument(std::string("adapt_") + to_string(cfg.method) + ": empty test set");
  for (const auto& img : images) require_input_size(model, img, "adapt");

  AdaptResult out;
  if (cfg.mode == AdaptMode::Continual) {
    Runner r(cfg, model);
    r.run(images, out, hook);
    return out;
  }
  // episodic: every image starts from the given parameters
  out.predictions.reserve(images.size());
  for (std::size_t k = 0; k < images.size(); ++k) {
    Model local = model;
    Runner r(cfg, local);
    AdaptResult one;
    r.run(images.subspan(k, 1), one, {});
    for (auto& s : one.trace) s.batch = static_cast<int>(k);
    out.trace.insert(out.trace.end(), one.trace.begin(), one.trace.end());
    out.predictions.push_back(predict(local, images.subspan(k, 1)).front());
  }
  return out;
}

namespace {

AdaptResult run_as(AdaptMethod m, Model& model, std::span<const ImageTensor> images, AdaptConfig cfg,
                   const EpochHook& hook) {
  cfg.method = m;
  return adapt(model, images, cfg, hook);
}

}  // namespace

AdaptResult adapt_tica(Model& model, std::span<const ImageTensor> images, AdaptConfig cfg, const EpochHook& hook) {
  return run_as(AdaptMethod::Tica, model, images, std::move(cfg), hook);
}
AdaptResult adapt_tent(Model& model, std::span<const ImageTensor> images, AdaptConfig cfg, const EpochHook& hook) {
  return run_as(AdaptMethod::Tent, model, images, std::move(cfg), hook);
}
AdaptResult adapt_bn(Model& model, std::span<const ImageTensor> images, AdaptConfig cfg, const EpochHook& hook) {
  return run_as(AdaptMethod::Bn, model, images, std::move(cfg), hook);
}
AdaptResult adapt_eta(Model& model, std::span<const ImageTensor> images, AdaptConfig cfg, const EpochHook& hook) {
  return run_as(AdaptMethod::Eta, model, images, std::move(cfg), hook);
}

}  // namespace tica
