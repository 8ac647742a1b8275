#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tica/data.hpp"
#include "tica/losses.hpp"
#include "tica/model.hpp"
#include "tica/optim.hpp"

namespace tica {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  double lr = 2e-3;
  /// Decoupled AdamW weight decay.
  double weight_decay = 1e-4;
  bool cosine = true;
  /// Random flip / resize / crop on every training sample.
  bool augment = true;
  BbceWeighting weighting = BbceWeighting::InverseFrequency;
  double grad_clip = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainStep {
  int epoch = 0;
  int batch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::vector<TrainStep> trace;
};

/// Optimizer and step counter carried across (possibly resumed) runs.
struct TrainState {
  std::optional<Adam> optimizer;
  std::uint64_t step = 0;
};

/// Minimises the mean per-image BBCE with AdamW. Every epoch draws its
/// shuffle and augmentations from (seed, epoch), so a run resumed at an epoch
/// boundary with its optimizer state reproduces the uninterrupted run.
TrainResult train_supervised(Model& model, std::span<const SamplePair> data, const TrainConfig& cfg,
                             TrainState& state);
TrainResult train_supervised(Model& model, std::span<const SamplePair> data, const TrainConfig& cfg);

enum class AdaptMethod : std::uint8_t { None, Tica, Tent, Bn, Eta };
enum class AdaptMode : std::uint8_t { Continual, Episodic };

const char* to_string(AdaptMethod m) noexcept;
AdaptMethod parse_adapt_method(const std::string& s);
const char* to_string(AdaptMode m) noexcept;
AdaptMode parse_adapt_mode(const std::string& s);

/// TICA: encoder; TENT/ETA: normalization affine; BN and none: nothing.
UpdateScope default_scope(AdaptMethod m) noexcept;

struct AdaptConfig {
  AdaptMethod method = AdaptMethod::Tica;
  int epochs = 5;
  int batch_size = 4;
  double lr = 1e-4;
  LossWeights weights;
  double threshold = 0.5;
  /// Unset means the method's default scope.
  std::optional<UpdateScope> update_scope;
  KlMode kl_mode = KlMode::Sym;
  bool detach_target = false;
  /// ETA keeps a sample when its mean prediction entropy is below this.
  double eta_entropy_threshold = 0.4 * 0.69314718055994530942;
  AdaptMode mode = AdaptMode::Continual;
  /// Forward with running statistics (and leave them untouched) instead of
  /// batch statistics.
  bool eval_stats = false;
  double grad_clip = 0.0;
  std::uint64_t seed = 1;

  UpdateScope scope() const noexcept { return update_scope.value_or(default_scope(method)); }
  void validate() const;
};

struct AdaptStep {
  int epoch = 0;
  int batch = 0;
  std::string method;
  double loss = 0.0;
  double fg = 0.0;
  double bg = 0.0;
  /// Batch elements that contributed to the loss.
  int selected = 0;
};

struct AdaptResult {
  std::vector<AdaptStep> trace;
  /// Episodic mode only: prediction for each image after its own adaptation.
  std::vector<ShadowMask> predictions;
};

/// Called after every completed epoch (1-based) in continual mode.
using EpochHook = std::function<void(int epoch, const Model& model)>;

/// Dispatches on cfg.method. In continual mode `model` is updated in place;
/// in episodic mode it is left as given and per-image predictions are
/// returned instead.
AdaptResult adapt(Model& model, std::span<const ImageTensor> images, const AdaptConfig& cfg,
                  const EpochHook& hook = {});

AdaptResult adapt_tica(Model& model, std::span<const ImageTensor> images, AdaptConfig cfg, const EpochHook& hook = {});
AdaptResult adapt_tent(Model& model, std::span<const ImageTensor> images, AdaptConfig cfg, const EpochHook& hook = {});
AdaptResult adapt_bn(Model& model, std::span<const ImageTensor> images, AdaptConfig cfg, const EpochHook& hook = {});
AdaptResult adapt_eta(Model& model, std::span<const ImageTensor> images, AdaptConfig cfg, const EpochHook& hook = {});

}  // namespace tica
