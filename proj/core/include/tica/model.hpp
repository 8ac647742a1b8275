#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tica/image.hpp"
#include "tica/layers.hpp"
#include "tica/random.hpp"

namespace tica {

struct ModelConfig {
  Size2 input_size{128, 128};
  int in_channels = 3;
  /// Encoder stage widths; stage k emits the stride 2^(k+1) feature level.
  std::array<int, 4> widths{16, 32, 64, 128};
  /// Shared projection width of the fusion decoder.
  int decoder_width = 32;
  double norm_momentum = 0.1;
  double norm_eps = 1e-5;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup : std::uint8_t { Encoder, Decoder };
enum class ParamKind : std::uint8_t { ConvWeight, ConvBias, NormScale, NormShift };

const char* to_string(ParamGroup g) noexcept;
const char* to_string(ParamKind k) noexcept;
ParamGroup parse_param_group(const std::string& s);
ParamKind parse_param_kind(const std::string& s);

template <typename T>
struct ParamTensor {
  std::string name;
  ParamGroup group = ParamGroup::Encoder;
  ParamKind kind = ParamKind::ConvWeight;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
};

/// Non-learnable state (normalization running statistics).
template <typename T>
struct StateTensor {
  std::string name;
  ParamGroup group = ParamGroup::Encoder;
  std::vector<int> shape;
  std::vector<T> value;
};

/// Which learnable tensors an optimizer step may modify.
enum class UpdateScope : std::uint8_t { None, Encoder, Decoder, All, NormAffine };

const char* to_string(UpdateScope s) noexcept;
UpdateScope parse_update_scope(const std::string& s);
bool in_scope(UpdateScope scope, ParamGroup group, ParamKind kind) noexcept;

template <typename T>
class ParamStore {
 public:
  std::vector<ParamTensor<T>>& params() noexcept { return params_; }
  const std::vector<ParamTensor<T>>& params() const noexcept { return params_; }
  std::vector<StateTensor<T>>& states() noexcept { return states_; }
  const std::vector<StateTensor<T>>& states() const noexcept { return states_; }

  std::size_t add_param(std::string name, ParamGroup group, ParamKind kind, std::vector<int> shape);
  std::size_t add_state(std::string name, ParamGroup group, std::vector<int> shape, T fill);

  const ParamTensor<T>& param(const std::string& name) const;
  std::size_t parameter_count() const noexcept;
  void zero_grad() noexcept;

  /// Incremented whenever parameter values change; forward caches remember it.
  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }

 private:
  std::vector<ParamTensor<T>> params_;
  std::vector<StateTensor<T>> states_;
  std::uint64_t version_ = 0;
};

enum class Mode { Train, Eval };

/// How normalization layers treat statistics during a forward pass.
struct ForwardOptions {
  bool batch_stats = true;
  bool update_running = true;
  /// Negative means "use the configured momentum".
  double momentum = -1.0;

  static ForwardOptions for_mode(Mode m);
};

template <typename T>
struct ForwardCache {
  const void* owner = nullptr;
  std::uint64_t version = 0;
  int batch = 0;

  struct Stage {
    layers::ConvCache<T> conv_a, conv_b;
    /// conv_b holds the rectified output of the first block; the norms'
    /// x_hat and shift recover the rectifier masks in backward.
    layers::NormCache<T> norm_a, norm_b;
  };
  std::array<Stage, 4> stages;
  std::array<Tensor4<T>, 4> features;
  std::array<layers::ConvCache<T>, 4> proj;
  /// fuse_b and head hold the rectified outputs of fuse_a and fuse_b.
  layers::ConvCache<T> fuse_a, fuse_b, head;
  /// (n, H, W, 1) probabilities.
  Tensor4<T> probs;
};

/// Encoder (4 conv-norm-relu x2 + avg-pool stages) feeding a fusion decoder
/// that projects each level to a shared width, fuses at stride 2 and predicts
/// a full-resolution shadow probability map.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& store() noexcept { return store_; }
  const ParamStore<T>& store() const noexcept { return store_; }

  /// Forward pass; updates normalization running statistics when
  /// `opts.update_running` is set.
  ForwardCache<T> forward(const Tensor4<T>& batch, const ForwardOptions& opts);
  ForwardCache<T> forward(const Tensor4<T>& batch, Mode mode) {
    return forward(batch, ForwardOptions::for_mode(mode));
  }
  /// Forward pass that never touches running statistics.
  ForwardCache<T> infer(const Tensor4<T>& batch, ForwardOptions opts = ForwardOptions::for_mode(Mode::Eval)) const;

  /// Accumulates parameter gradients for d(loss)/d(probs) = grad_probs.
  /// Returns d(loss)/d(input) when `want_input_grad`, otherwise an empty tensor.
  Tensor4<T> backward(const ForwardCache<T>& cache, const Tensor4<T>& grad_probs, bool want_input_grad = false);

  /// Multi-scale encoder features (strides 2, 4, 8, 16) in eval mode.
  std::array<Tensor4<T>, 4> feature_pyramid(const Tensor4<T>& batch) const;

  template <typename U>
  Network<U> cast() const;

 private:
  template <typename U>
  friend class Network;

  ForwardCache<T> run_forward(const Tensor4<T>& batch, const ForwardOptions& opts, bool mutate_stats) const;

  ModelConfig cfg_;
  ParamStore<T> store_;
};

/// Production model type.
using Model = Network<float>;

template <typename T>
Tensor4<T> make_batch(std::span<const ImageTensor> images);
template <typename T>
ShadowMask mask_from_batch(const Tensor4<T>& probs, int index);

/// Eval-mode probabilities for each image.
std::vector<ShadowMask> predict(const Model& model, std::span<const ImageTensor> images, int batch_size = 8);

}  // namespace tica
