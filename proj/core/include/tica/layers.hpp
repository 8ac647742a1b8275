#pragma once

// Batched NHWC layer kernels used by the segmentation network. Each forward
// kernel fills a cache struct that its backward kernel consumes.

#include <cstddef>
#include <vector>

namespace tica {

template <typename T>
struct Tensor4 {
  int n = 0;
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int h_, int w_, int c_, T fill = T{})
      : n(n_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t image_size() const noexcept { return static_cast<std::size_t>(h) * w * c; }
  T* image(int i) noexcept { return data.data() + i * image_size(); }
  const T* image(int i) const noexcept { return data.data() + i * image_size(); }
  T& at(int i, int y, int x, int ch) noexcept {
    return data[((static_cast<std::size_t>(i) * h + y) * w + x) * c + ch];
  }
  const T& at(int i, int y, int x, int ch) const noexcept {
    return data[((static_cast<std::size_t>(i) * h + y) * w + x) * c + ch];
  }
  bool same_shape(const Tensor4& o) const noexcept { return n == o.n && h == o.h && w == o.w && c == o.c; }
};

namespace layers {

/// Square convolution, stride 1, zero "same" padding. Weights are
/// [out][ky][kx][in] flattened row-major.
template <typename T>
struct ConvSpec {
  int kernel = 3;
  int in_channels = 0;
  int out_channels = 0;
  const T* weight = nullptr;
  const T* bias = nullptr;  // optional
};

template <typename T>
struct ConvCache {
  Tensor4<T> columns;  // layer input, kept for the weight gradient
  int in_h = 0, in_w = 0, in_c = 0, kernel = 0;
};

/// Takes the input by value; it is moved into the cache.
template <typename T>
Tensor4<T> conv_forward(Tensor4<T> x, const ConvSpec<T>& spec, ConvCache<T>& cache);

/// Accumulates weight/bias gradients; returns dx when `need_dx`.
template <typename T>
Tensor4<T> conv_backward(const Tensor4<T>& dy, const ConvSpec<T>& spec, T* dweight, T* dbias,
                         const ConvCache<T>& cache, bool need_dx);

template <typename T>
struct NormCache {
  Tensor4<T> x_hat;
  std::vector<T> inv_std;
  bool batch_stats = true;
};

struct NormSettings {
  bool batch_stats = true;
  bool update_running = true;
  /// Weight of the new batch statistic in the running average.
  double momentum = 0.1;
  double eps = 1e-5;
  /// Apply a rectifier to the output in the same pass.
  bool relu = false;
};

/// Per-channel normalization with affine scale/shift and running statistics.
template <typename T>
Tensor4<T> norm_forward(const Tensor4<T>& x, const T* gamma, const T* beta, T* running_mean, T* running_var,
                        const NormSettings& settings, NormCache<T>& cache);

/// With `relu_beta`, dy is taken with respect to relu(output) of a forward
/// pass that used that shift.
template <typename T>
Tensor4<T> norm_backward(const Tensor4<T>& dy, const T* gamma, T* dgamma, T* dbeta, const NormCache<T>& cache,
                         const T* relu_beta = nullptr);

/// In place; returns the activation (which doubles as the cache).
template <typename T>
void relu_inplace(Tensor4<T>& x);
template <typename T>
void relu_backward_inplace(Tensor4<T>& dy, const Tensor4<T>& y);

template <typename T>
Tensor4<T> avg_pool2(const Tensor4<T>& x);
template <typename T>
Tensor4<T> avg_pool2_backward(const Tensor4<T>& dy);

/// Bilinear resize with half-pixel centers (edges clamped).
template <typename T>
Tensor4<T> resize_bilinear(const Tensor4<T>& x, int out_h, int out_w);
template <typename T>
Tensor4<T> resize_bilinear_backward(const Tensor4<T>& dy, int in_h, int in_w);

template <typename T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& parts);
template <typename T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& dy, const std::vector<int>& widths);

}  // namespace layers
}  // namespace tica
