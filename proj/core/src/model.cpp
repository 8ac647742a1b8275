#include "tica/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tica {
namespace {

// Fixed parameter layout produced by the constructor.
constexpr std::size_t kPerStage = 6;  // conv_a.w, norm_a.scale, norm_a.shift, conv_b.w, norm_b.scale, norm_b.shift
constexpr std::size_t enc_param(int stage, int slot) { return kPerStage * stage + slot; }
constexpr std::size_t proj_param(int level) { return 4 * kPerStage + 2 * level; }
constexpr std::size_t kFuseA = 4 * kPerStage + 8;
constexpr std::size_t kFuseB = kFuseA + 2;
constexpr std::size_t kHead = kFuseB + 2;
constexpr std::size_t enc_state(int stage, int slot) { return 4 * stage + slot; }  // a.mean a.var b.mean b.var

constexpr double kProbClamp = 1e-7;

template <typename T>
layers::ConvSpec<T> conv_spec(const ParamStore<T>& s, std::size_t weight_idx, bool has_bias) {
  const auto& w = s.params()[weight_idx];
  layers::ConvSpec<T> spec;
  spec.out_channels = w.shape[0];
  spec.kernel = w.shape[1];
  spec.in_channels = w.shape[3];
  spec.weight = w.value.data();
  spec.bias = has_bias ? s.params()[weight_idx + 1].value.data() : nullptr;
  return spec;
}

template <typename T>
void kaiming_uniform(std::vector<T>& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (T& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

void ModelConfig::validate() const {
  if (input_size.rows <= 0 || input_size.cols <= 0 || input_size.rows % 16 != 0 || input_size.cols % 16 != 0) {
    throw std::invalid_argument("ModelConfig: input size " + to_string(input_size) + " must be divisible by 16");
  }
  if (in_channels <= 0) throw std::invalid_argument("ModelConfig: in_channels must be positive");
  for (int w : widths) {
    if (w <= 0) throw std::invalid_argument("ModelConfig: widths must be positive");
  }
  if (decoder_width <= 0) throw std::invalid_argument("ModelConfig: decoder_width must be positive");
  if (!(norm_momentum >= 0.0 && norm_momentum <= 1.0)) throw std::invalid_argument("ModelConfig: norm_momentum outside [0,1]");
  if (!(norm_eps > 0.0)) throw std::invalid_argument("ModelConfig: norm_eps must be positive");
}

const char* to_string(ParamGroup g) noexcept { return g == ParamGroup::Encoder ? "encoder" : "decoder"; }

const char* to_string(ParamKind k) noexcept {
  switch (k) {
    case ParamKind::ConvWeight: return "conv_weight";
    case ParamKind::ConvBias: return "conv_bias";
    case ParamKind::NormScale: return "norm_scale";
    case ParamKind::NormShift: return "norm_shift";
  }
  return "?";
}

ParamGroup parse_param_group(const std::string& s) {
  if (s == "encoder") return ParamGroup::Encoder;
  if (s == "decoder") return ParamGroup::Decoder;
  throw std::invalid_argument("unknown parameter group '" + s + "'");
}

ParamKind parse_param_kind(const std::string& s) {
  for (ParamKind k : {ParamKind::ConvWeight, ParamKind::ConvBias, ParamKind::NormScale, ParamKind::NormShift}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown parameter kind '" + s + "'");
}

const char* to_string(UpdateScope s) noexcept {
  switch (s) {
    case UpdateScope::None: return "none";
    case UpdateScope::Encoder: return "encoder";
    case UpdateScope::Decoder: return "decoder";
    case UpdateScope::All: return "all";
    case UpdateScope::NormAffine: return "norm-affine";
  }
  return "?";
}

UpdateScope parse_update_scope(const std::string& s) {
  for (UpdateScope u : {UpdateScope::None, UpdateScope::Encoder, UpdateScope::Decoder, UpdateScope::All,
                        UpdateScope::NormAffine}) {
    if (s == to_string(u)) return u;
  }
  throw std::invalid_argument("unknown update scope '" + s + "'");
}

bool in_scope(UpdateScope scope, ParamGroup group, ParamKind kind) noexcept {
  switch (scope) {
    case UpdateScope::None: return false;
    case UpdateScope::Encoder: return group == ParamGroup::Encoder;
    case UpdateScope::Decoder: return group == ParamGroup::Decoder;
    case UpdateScope::All: return true;
    case UpdateScope::NormAffine: return kind == ParamKind::NormScale || kind == ParamKind::NormShift;
  }
  return false;
}

template <typename T>
std::size_t ParamStore<T>::add_param(std::string name, ParamGroup group, ParamKind kind, std::vector<int> shape) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  ParamTensor<T> p;
  p.name = std::move(name);
  p.group = group;
  p.kind = kind;
  p.shape = std::move(shape);
  p.value.assign(count, T{});
  p.grad.assign(count, T{});
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
std::size_t ParamStore<T>::add_state(std::string name, ParamGroup group, std::vector<int> shape, T fill) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  states_.push_back({std::move(name), group, std::move(shape), std::vector<T>(count, fill)});
  return states_.size() - 1;
}

template <typename T>
const ParamTensor<T>& ParamStore<T>::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() noexcept {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T{});
}

ForwardOptions ForwardOptions::for_mode(Mode m) {
  ForwardOptions o;
  o.batch_stats = m == Mode::Train;
  o.update_running = m == Mode::Train;
  return o;
}

template <typename T>
Network<T>::Network(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  int in = cfg.in_channels;
  for (int s = 0; s < 4; ++s) {
    const int w = cfg.widths[s];
    const std::string pre = "enc.s" + std::to_string(s) + ".";
    for (const char* half : {"a", "b"}) {
      const int cin = half[0] == 'a' ? in : w;
      const auto wi = store_.add_param(pre + "conv_" + half + ".weight", ParamGroup::Encoder, ParamKind::ConvWeight,
                                       {w, 3, 3, cin});
      kaiming_uniform(store_.params()[wi].value, 9 * cin, rng);
      const auto gi = store_.add_param(pre + "norm_" + half + ".scale", ParamGroup::Encoder, ParamKind::NormScale, {w});
      std::fill(store_.params()[gi].value.begin(), store_.params()[gi].value.end(), T{1});
      store_.add_param(pre + "norm_" + half + ".shift", ParamGroup::Encoder, ParamKind::NormShift, {w});
      store_.add_state(pre + "norm_" + half + ".running_mean", ParamGroup::Encoder, {w}, T{0});
      store_.add_state(pre + "norm_" + half + ".running_var", ParamGroup::Encoder, {w}, T{1});
    }
    in = w;
  }
  const int d = cfg.decoder_width;
  for (int k = 0; k < 4; ++k) {
    const std::string pre = "dec.proj" + std::to_string(k) + ".";
    const auto wi = store_.add_param(pre + "weight", ParamGroup::Decoder, ParamKind::ConvWeight, {d, 1, 1, cfg.widths[k]});
    kaiming_uniform(store_.params()[wi].value, cfg.widths[k], rng);
    store_.add_param(pre + "bias", ParamGroup::Decoder, ParamKind::ConvBias, {d});
  }
  struct Spec {
    const char* name;
    int out, k, in;
  };
  for (const Spec& sp : {Spec{"dec.fuse_a.", d, 3, 4 * d}, Spec{"dec.fuse_b.", d, 3, d}, Spec{"dec.head.", 1, 1, d}}) {
    const auto wi = store_.add_param(std::string(sp.name) + "weight", ParamGroup::Decoder, ParamKind::ConvWeight,
                                     {sp.out, sp.k, sp.k, sp.in});
    kaiming_uniform(store_.params()[wi].value, sp.k * sp.k * sp.in, rng);
    store_.add_param(std::string(sp.name) + "bias", ParamGroup::Decoder, ParamKind::ConvBias, {sp.out});
  }
}

template <typename T>
ForwardCache<T> Network<T>::forward(const Tensor4<T>& batch, const ForwardOptions& opts) {
  return run_forward(batch, opts, true);
}

template <typename T>
ForwardCache<T> Network<T>::infer(const Tensor4<T>& batch, ForwardOptions opts) const {
  opts.update_running = false;
  return run_forward(batch, opts, false);
}

template <typename T>
ForwardCache<T> Network<T>::run_forward(const Tensor4<T>& batch, const ForwardOptions& opts, bool mutate_stats) const {
  if (batch.n <= 0 || batch.h != cfg_.input_size.rows || batch.w != cfg_.input_size.cols ||
      batch.c != cfg_.in_channels) {
    throw std::invalid_argument("Network::forward: expected input " + to_string(cfg_.input_size) + "x" +
                                std::to_string(cfg_.in_channels) + ", got " + std::to_string(batch.h) + "x" +
                                std::to_string(batch.w) + "x" + std::to_string(batch.c));
  }
  layers::NormSettings ns;
  ns.batch_stats = opts.batch_stats;
  ns.update_running = mutate_stats && opts.update_running && opts.batch_stats;
  ns.momentum = opts.momentum >= 0.0 ? opts.momentum : cfg_.norm_momentum;
  ns.eps = cfg_.norm_eps;

  // running stats are only written when ns.update_running is set, which
  // requires the non-const entry point
  auto& states = const_cast<std::vector<StateTensor<T>>&>(store_.states());
  const auto& P = store_.params();

  ForwardCache<T> cache;
  cache.owner = this;
  cache.version = store_.version();
  cache.batch = batch.n;

  layers::NormSettings ns_relu = ns;
  ns_relu.relu = true;
  for (int s = 0; s < 4; ++s) {
    auto& st = cache.stages[s];
    Tensor4<T> a = layers::conv_forward(s == 0 ? batch : cache.features[s - 1],
                                        conv_spec(store_, enc_param(s, 0), false), st.conv_a);
    a = layers::norm_forward(a, P[enc_param(s, 1)].value.data(), P[enc_param(s, 2)].value.data(),
                             states[enc_state(s, 0)].value.data(), states[enc_state(s, 1)].value.data(), ns_relu,
                             st.norm_a);
    Tensor4<T> b = layers::conv_forward(std::move(a), conv_spec(store_, enc_param(s, 3), false), st.conv_b);
    const Tensor4<T> act = layers::norm_forward(b, P[enc_param(s, 4)].value.data(), P[enc_param(s, 5)].value.data(),
                                                states[enc_state(s, 2)].value.data(),
                                                states[enc_state(s, 3)].value.data(), ns_relu, st.norm_b);
    cache.features[s] = layers::avg_pool2(act);
  }

  const int hh = cfg_.input_size.rows / 2;
  const int hw = cfg_.input_size.cols / 2;
  std::array<Tensor4<T>, 4> up;
  for (int k = 0; k < 4; ++k) {
    Tensor4<T> p = layers::conv_forward(cache.features[k], conv_spec(store_, proj_param(k), true), cache.proj[k]);
    up[k] = k == 0 ? std::move(p) : layers::resize_bilinear(p, hh, hw);
  }
  Tensor4<T> z = layers::concat_channels<T>({&up[0], &up[1], &up[2], &up[3]});
  Tensor4<T> fa = layers::conv_forward(std::move(z), conv_spec(store_, kFuseA, true), cache.fuse_a);
  layers::relu_inplace(fa);
  Tensor4<T> fb = layers::conv_forward(std::move(fa), conv_spec(store_, kFuseB, true), cache.fuse_b);
  layers::relu_inplace(fb);
  const Tensor4<T> logits_half = layers::conv_forward(std::move(fb), conv_spec(store_, kHead, true), cache.head);
  Tensor4<T> logits = layers::resize_bilinear(logits_half, cfg_.input_size.rows, cfg_.input_size.cols);
  for (T& v : logits.data) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
    v = static_cast<T>(std::clamp(p, kProbClamp, 1.0 - kProbClamp));
  }
  cache.probs = std::move(logits);
  return cache;
}

template <typename T>
Tensor4<T> Network<T>::backward(const ForwardCache<T>& cache, const Tensor4<T>& grad_probs, bool want_input_grad) {
  if (cache.owner != this) throw std::logic_error("Network::backward: cache belongs to another network");
  if (cache.version != store_.version()) throw std::logic_error("Network::backward: stale cache (parameters changed)");
  if (!grad_probs.same_shape(cache.probs)) throw std::invalid_argument("Network::backward: gradient shape mismatch");

  auto& P = store_.params();
  auto grad_of = [&](std::size_t i) { return P[i].grad.data(); };

  Tensor4<T> g = grad_probs;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T p = cache.probs.data[i];
    g.data[i] *= p * (T{1} - p);
  }
  const int hh = cfg_.input_size.rows / 2;
  const int hw = cfg_.input_size.cols / 2;
  Tensor4<T> gl = layers::resize_bilinear_backward(g, hh, hw);
  Tensor4<T> gq = layers::conv_backward(gl, conv_spec(store_, kHead, true), grad_of(kHead), grad_of(kHead + 1),
                                        cache.head, true);
  layers::relu_backward_inplace(gq, cache.head.columns);
  gq = layers::conv_backward(gq, conv_spec(store_, kFuseB, true), grad_of(kFuseB), grad_of(kFuseB + 1), cache.fuse_b,
                             true);
  layers::relu_backward_inplace(gq, cache.fuse_b.columns);
  const Tensor4<T> gz = layers::conv_backward(gq, conv_spec(store_, kFuseA, true), grad_of(kFuseA),
                                              grad_of(kFuseA + 1), cache.fuse_a, true);
  const int d = cfg_.decoder_width;
  std::vector<Tensor4<T>> parts = layers::split_channels(gz, {d, d, d, d});

  std::array<Tensor4<T>, 4> gfeat;
  for (int k = 0; k < 4; ++k) {
    const auto& f = cache.features[k];
    Tensor4<T> gp = k == 0 ? std::move(parts[0]) : layers::resize_bilinear_backward(parts[k], f.h, f.w);
    gfeat[k] = layers::conv_backward(gp, conv_spec(store_, proj_param(k), true), grad_of(proj_param(k)),
                                     grad_of(proj_param(k) + 1), cache.proj[k], true);
  }

  Tensor4<T> carry;
  for (int s = 3; s >= 0; --s) {
    const auto& st = cache.stages[s];
    Tensor4<T> gf = std::move(gfeat[s]);
    if (!carry.data.empty()) {
      for (std::size_t i = 0; i < gf.size(); ++i) gf.data[i] += carry.data[i];
    }
    Tensor4<T> gb = layers::avg_pool2_backward(gf);
    gb = layers::norm_backward(gb, P[enc_param(s, 4)].value.data(), grad_of(enc_param(s, 4)), grad_of(enc_param(s, 5)),
                               st.norm_b, P[enc_param(s, 5)].value.data());
    Tensor4<T> ga = layers::conv_backward(gb, conv_spec(store_, enc_param(s, 3), false), grad_of(enc_param(s, 3)),
                                          static_cast<T*>(nullptr), st.conv_b, true);
    ga = layers::norm_backward(ga, P[enc_param(s, 1)].value.data(), grad_of(enc_param(s, 1)), grad_of(enc_param(s, 2)),
                               st.norm_a, P[enc_param(s, 2)].value.data());
    carry = layers::conv_backward(ga, conv_spec(store_, enc_param(s, 0), false), grad_of(enc_param(s, 0)), static_cast<T*>(nullptr),
                                  st.conv_a, s > 0 || want_input_grad);
  }
  return want_input_grad ? carry : Tensor4<T>{};
}

template <typename T>
std::array<Tensor4<T>, 4> Network<T>::feature_pyramid(const Tensor4<T>& batch) const {
  return infer(batch).features;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out;
  out.cfg_ = cfg_;
  for (const auto& p : store_.params()) {
    const auto i = out.store_.add_param(p.name, p.group, p.kind, p.shape);
    std::transform(p.value.begin(), p.value.end(), out.store_.params()[i].value.begin(),
                   [](T v) { return static_cast<U>(v); });
  }
  for (const auto& s : store_.states()) {
    const auto i = out.store_.add_state(s.name, s.group, s.shape, U{});
    std::transform(s.value.begin(), s.value.end(), out.store_.states()[i].value.begin(),
                   [](T v) { return static_cast<U>(v); });
  }
  return out;
}

template <typename T>
Tensor4<T> make_batch(std::span<const ImageTensor> images) {
  if (images.empty()) throw std::invalid_argument("make_batch: no images");
  const auto& first = images.front();
  Tensor4<T> b(static_cast<int>(images.size()), first.rows(), first.cols(), first.channels());
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(images[i], first, "make_batch");
    std::transform(images[i].data().begin(), images[i].data().end(), b.image(static_cast<int>(i)),
                   [](float v) { return static_cast<T>(v); });
  }
  return b;
}

template <typename T>
ShadowMask mask_from_batch(const Tensor4<T>& probs, int index) {
  ShadowMask m(probs.h, probs.w);
  const T* src = probs.image(index);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(src[i]);
  return m;
}

std::vector<ShadowMask> predict(const Model& model, std::span<const ImageTensor> images, int batch_size) {
  if (batch_size <= 0) throw std::invalid_argument("predict: batch_size must be positive");
  std::vector<ShadowMask> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t count = std::min<std::size_t>(batch_size, images.size() - start);
    const auto batch = make_batch<float>(images.subspan(start, count));
    const auto cache = model.infer(batch);
    for (std::size_t i = 0; i < count; ++i) out.push_back(mask_from_batch(cache.probs, static_cast<int>(i)));
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;
template Tensor4<float> make_batch<float>(std::span<const ImageTensor>);
template Tensor4<double> make_batch<double>(std::span<const ImageTensor>);
template ShadowMask mask_from_batch<float>(const Tensor4<float>&, int);
template ShadowMask mask_from_batch<double>(const Tensor4<double>&, int);

}  // namespace tica
