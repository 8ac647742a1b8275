#include "tica/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <type_traits>

namespace tica::layers {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatRM<T>>;
template <typename T>
using CMap = Eigen::Map<const MatRM<T>>;

struct ResizeTable {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};

ResizeTable resize_table(int in, int out) {
  ResizeTable t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int a = static_cast<int>(std::floor(src));
    if (a > in - 1) a = in - 1;
    t.i0[o] = a;
    t.i1[o] = std::min(a + 1, in - 1);
    t.frac[o] = src - a;
  }
  return t;
}

// Direct 3x3 convolution over one NHWC image for output channels
// [co_begin, co_begin + CO). Weights are laid out [9][cin][co_total].
template <typename T, int CO>
void conv3x3_block(const T* in, int h, int w, int cin, const T* wt, int co_total, int co_begin, const T* bias,
                   T* out) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      T acc[CO];
      for (int o = 0; o < CO; ++o) acc[o] = bias != nullptr ? bias[co_begin + o] : T{};
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          const T* ip = in + (static_cast<std::size_t>(sy) * w + sx) * cin;
          const T* wp = wt + static_cast<std::size_t>(ky * 3 + kx) * cin * co_total + co_begin;
          for (int ci = 0; ci < cin; ++ci) {
            const T v = ip[ci];
            const T* wr = wp + static_cast<std::size_t>(ci) * co_total;
            for (int o = 0; o < CO; ++o) acc[o] += v * wr[o];
          }
        }
      }
      T* op = out + (static_cast<std::size_t>(y) * w + x) * co_total + co_begin;
      for (int o = 0; o < CO; ++o) op[o] = acc[o];
    }
  }
}

template <typename T>
void conv3x3_generic(const T* in, int h, int w, int cin, const T* wt, int co_total, int co_begin, int co_count,
                     const T* bias, T* out) {
  std::vector<T> acc(co_count);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int o = 0; o < co_count; ++o) acc[o] = bias != nullptr ? bias[co_begin + o] : T{};
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          const T* ip = in + (static_cast<std::size_t>(sy) * w + sx) * cin;
          const T* wp = wt + static_cast<std::size_t>(ky * 3 + kx) * cin * co_total + co_begin;
          for (int ci = 0; ci < cin; ++ci) {
            for (int o = 0; o < co_count; ++o) acc[o] += ip[ci] * wp[static_cast<std::size_t>(ci) * co_total + o];
          }
        }
      }
      T* op = out + (static_cast<std::size_t>(y) * w + x) * co_total + co_begin;
      for (int o = 0; o < co_count; ++o) op[o] = acc[o];
    }
  }
}

template <int L>
struct VecOf {
  typedef float type __attribute__((vector_size(L * sizeof(float))));
};

// PX consecutive output pixels of row y starting at x0, reading a zero-padded
// input with row stride (w + 2) * cin; L output channels from co_begin.
template <int L, int PX>
inline void conv3x3_micro(const float* pad, int w, int cin, const float* wt, int co_total, int co_begin,
                          const float* bias, int y, int x0, float* out) {
  using V = typename VecOf<L>::type;
  V init{};
  if (bias != nullptr) std::memcpy(&init, bias + co_begin, sizeof(V));
  V acc[PX];
  for (int p = 0; p < PX; ++p) acc[p] = init;
  const std::size_t stride = static_cast<std::size_t>(w + 2) * cin;
  for (int ky = 0; ky < 3; ++ky) {
    for (int kx = 0; kx < 3; ++kx) {
      const float* ip = pad + (y + ky) * stride + static_cast<std::size_t>(x0 + kx) * cin;
      const float* wp = wt + static_cast<std::size_t>(ky * 3 + kx) * cin * co_total + co_begin;
      for (int ci = 0; ci < cin; ++ci) {
        V wv;
        std::memcpy(&wv, wp + static_cast<std::size_t>(ci) * co_total, sizeof(V));
        for (int p = 0; p < PX; ++p) acc[p] += ip[p * cin + ci] * wv;
      }
    }
  }
  float* op = out + (static_cast<std::size_t>(y) * w + x0) * co_total + co_begin;
  for (int p = 0; p < PX; ++p) std::memcpy(op + static_cast<std::size_t>(p) * co_total, &acc[p], sizeof(V));
}

template <int L>
void conv3x3_vec(const float* pad, int h, int w, int cin, const float* wt, int co_total, int co_begin,
                 const float* bias, float* out) {
  for (int y = 0; y < h; ++y) {
    int x = 0;
    for (; x + 8 <= w; x += 8) conv3x3_micro<L, 8>(pad, w, cin, wt, co_total, co_begin, bias, y, x, out);
    for (; x + 4 <= w; x += 4) conv3x3_micro<L, 4>(pad, w, cin, wt, co_total, co_begin, bias, y, x, out);
    for (; x < w; ++x) conv3x3_micro<L, 1>(pad, w, cin, wt, co_total, co_begin, bias, y, x, out);
  }
}

// Copies one H x W x C image into a buffer with a one-pixel zero border.
inline void pad_image(const float* in, int h, int w, int cin, std::vector<float>& pad) {
  const std::size_t row = static_cast<std::size_t>(w) * cin;
  const std::size_t stride = static_cast<std::size_t>(w + 2) * cin;
  pad.assign(static_cast<std::size_t>(h + 2) * stride, 0.0f);
  for (int y = 0; y < h; ++y) std::memcpy(pad.data() + (y + 1) * stride + cin, in + y * row, row * sizeof(float));
}

// Planar copy of one image with a one-pixel zero border, rows padded to a
// multiple of 16 plus a spare vector so 16-wide loads never leave the buffer.
struct PlanarPad {
  std::vector<float> data;
  int stride = 0;  // floats per padded row
  int rows = 0;
  const float* plane(int c) const noexcept { return data.data() + static_cast<std::size_t>(c) * rows * stride; }
};

inline void pad_planar(const float* in, int h, int w, int cin, PlanarPad& pad) {
  pad.stride = ((w + 15) / 16) * 16 + 16;
  pad.rows = h + 2;
  pad.data.resize(static_cast<std::size_t>(cin) * pad.rows * pad.stride);
  for (int c = 0; c < cin; ++c) {
    float* plane = pad.data.data() + static_cast<std::size_t>(c) * pad.rows * pad.stride;
    std::fill(plane, plane + pad.stride, 0.0f);
    std::fill(plane + static_cast<std::size_t>(h + 1) * pad.stride, plane + static_cast<std::size_t>(h + 2) * pad.stride,
              0.0f);
    for (int y = 0; y < h; ++y) {
      const float* src = in + static_cast<std::size_t>(y) * w * cin + c;
      float* dst = plane + static_cast<std::size_t>(y + 1) * pad.stride;
      dst[0] = 0.0f;
      for (int x = 0; x < w; ++x) dst[x + 1] = src[static_cast<std::size_t>(x) * cin];
      std::fill(dst + w + 1, dst + pad.stride, 0.0f);
    }
  }
}

// NV vectors of 16 pixels each, CB output channels from co_begin.
template <int CB, int NV>
inline void conv3x3_planar_block(const PlanarPad& pad, int w, int cin, const float* wt, int co_total, int co_begin,
                                 const float* bias, int y, int x0, float* out) {
  using V = typename VecOf<16>::type;
  V acc[NV][CB];
  for (int j = 0; j < CB; ++j) {
    const float b0 = bias != nullptr ? bias[co_begin + j] : 0.0f;
    for (int v = 0; v < NV; ++v) acc[v][j] = V{} + b0;
  }
  for (int ci = 0; ci < cin; ++ci) {
    const float* base = pad.plane(ci) + static_cast<std::size_t>(y) * pad.stride + x0;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        V iv[NV];
        for (int v = 0; v < NV; ++v)
          std::memcpy(&iv[v], base + static_cast<std::size_t>(ky) * pad.stride + kx + 16 * v, sizeof(V));
        const float* wp = wt + (static_cast<std::size_t>(ky * 3 + kx) * cin + ci) * co_total + co_begin;
        for (int j = 0; j < CB; ++j) {
          const float wj = wp[j];
          for (int v = 0; v < NV; ++v) acc[v][j] += iv[v] * wj;
        }
      }
    }
  }
  const int n = std::min(16 * NV, w - x0);
  float* op = out + (static_cast<std::size_t>(y) * w + x0) * co_total + co_begin;
  for (int j = 0; j < CB; ++j) {
    float tmp[16 * NV];
    std::memcpy(tmp, &acc[0][j], sizeof(V));
    for (int v = 1; v < NV; ++v) std::memcpy(tmp + 16 * v, &acc[v][j], sizeof(V));
    for (int p = 0; p < n; ++p) op[static_cast<std::size_t>(p) * co_total + j] = tmp[p];
  }
}

template <int CB>
void conv3x3_planar(const PlanarPad& pad, int h, int w, int cin, const float* wt, int co_total, int co_begin,
                    const float* bias, float* out) {
  for (int y = 0; y < h; ++y) {
    int x0 = 0;
    for (; x0 + 32 <= w; x0 += 32) conv3x3_planar_block<CB, 2>(pad, w, cin, wt, co_total, co_begin, bias, y, x0, out);
    for (; x0 < w; x0 += 16) conv3x3_planar_block<CB, 1>(pad, w, cin, wt, co_total, co_begin, bias, y, x0, out);
  }
}

template <typename T>
void conv3x3_image(const T* in, int h, int w, int cin, const T* wt, int cout, const T* bias, T* out) {
  int co = 0;
  if constexpr (std::is_same_v<T, float>) {
    if (cout >= 16) {
      thread_local std::vector<float> pad;
      pad_image(in, h, w, cin, pad);
      for (; co + 16 <= cout; co += 16) conv3x3_vec<16>(pad.data(), h, w, cin, wt, cout, co, bias, out);
    }
    if (co + 8 <= cout) {
      thread_local PlanarPad planar;
      pad_planar(in, h, w, cin, planar);
      for (; co + 8 <= cout; co += 8) conv3x3_planar<8>(planar, h, w, cin, wt, cout, co, bias, out);
    }
  } else {
    for (; co + 8 <= cout; co += 8) conv3x3_block<T, 8>(in, h, w, cin, wt, cout, co, bias, out);
  }
  if (co < cout) conv3x3_generic<T>(in, h, w, cin, wt, cout, co, cout - co, bias, out);
}

// Weight gradient for a 3x3 convolution over one image, accumulated into
// dwt laid out [9][cin][cout]; channels [ci_begin, ci_begin + CB) x
// [co_begin, co_begin + L).
template <int L, int CB>
void conv3x3_dw_vec(const float* x, const float* g, int h, int w, int cin, int cout, int ci_begin, int co_begin,
                    int y_begin, int y_end, float* dwt) {
  using V = typename VecOf<L>::type;
  for (int ky = 0; ky < 3; ++ky) {
    const int y_lo = std::max(y_begin, 1 - ky), y_hi = std::min(y_end, h + 1 - ky);
    for (int kx = 0; kx < 3; ++kx) {
      const int x_lo = std::max(0, 1 - kx), x_hi = std::min(w, w + 1 - kx);
      V acc[CB];
      for (int j = 0; j < CB; ++j) acc[j] = V{};
      for (int y = y_lo; y < y_hi; ++y) {
        const float* grow = g + static_cast<std::size_t>(y) * w * cout + co_begin;
        const float* xrow = x + (static_cast<std::size_t>(y + ky - 1) * w + (kx - 1)) * cin + ci_begin;
        for (int xx = x_lo; xx < x_hi; ++xx) {
          V gv;
          std::memcpy(&gv, grow + static_cast<std::size_t>(xx) * cout, sizeof(V));
          const float* xp = xrow + static_cast<std::size_t>(xx) * cin;
          for (int j = 0; j < CB; ++j) acc[j] += xp[j] * gv;
        }
      }
      float* dst = dwt + (static_cast<std::size_t>(ky * 3 + kx) * cin + ci_begin) * cout + co_begin;
      for (int j = 0; j < CB; ++j) {
        float tmp[L];
        std::memcpy(tmp, &acc[j], sizeof(V));
        for (int o = 0; o < L; ++o) dst[static_cast<std::size_t>(j) * cout + o] += tmp[o];
      }
    }
  }
}

// Output rows [y_begin, y_end) only; callers block rows so the touched input
// and gradient rows stay cached across taps.
template <int L>
void conv3x3_dw_cols(const float* x, const float* g, int h, int w, int cin, int cout, int co_begin, int y_begin,
                     int y_end, float* dwt) {
  int ci = 0;
  for (; ci + 8 <= cin; ci += 8) conv3x3_dw_vec<L, 8>(x, g, h, w, cin, cout, ci, co_begin, y_begin, y_end, dwt);
  for (; ci + 4 <= cin; ci += 4) conv3x3_dw_vec<L, 4>(x, g, h, w, cin, cout, ci, co_begin, y_begin, y_end, dwt);
  for (; ci < cin; ++ci) conv3x3_dw_vec<L, 1>(x, g, h, w, cin, cout, ci, co_begin, y_begin, y_end, dwt);
}

// Planar copy of CB gradient channels from co_begin, rows padded with zeros
// to `stride` floats.
inline void planar_channels(const float* g, int h, int w, int cout, int co_begin, int cb, int stride,
                            std::vector<float>& out) {
  out.resize(static_cast<std::size_t>(cb) * h * stride);
  for (int j = 0; j < cb; ++j) {
    for (int y = 0; y < h; ++y) {
      const float* src = g + static_cast<std::size_t>(y) * w * cout + co_begin + j;
      float* dst = out.data() + (static_cast<std::size_t>(j) * h + y) * stride;
      for (int x = 0; x < w; ++x) dst[x] = src[static_cast<std::size_t>(x) * cout];
      std::fill(dst + w, dst + stride, 0.0f);
    }
  }
}

// Weight gradient with 16 pixels per vector: for each input channel and
// kernel row, 3 x CB vector accumulators reduced at the end.
template <int CB>
void conv3x3_dw_planar(const PlanarPad& xp, const std::vector<float>& gp, int h, int w, int cin, int cout,
                       int co_begin, float* dwt) {
  using V = typename VecOf<16>::type;
  const std::size_t gs = static_cast<std::size_t>(xp.stride);
  // rows per block so that CB gradient rows stay in L1
  const int rb = std::max(1, static_cast<int>(24576 / (CB * gs * sizeof(float))));
  thread_local std::vector<V> partial;
  partial.assign(static_cast<std::size_t>(cin) * 9 * CB, V{});
  for (int y0 = 0; y0 < h; y0 += rb) {
    const int y1 = std::min(h, y0 + rb);
    for (int ci = 0; ci < cin; ++ci) {
      for (int ky = 0; ky < 3; ++ky) {
        V* slot = partial.data() + (static_cast<std::size_t>(ci) * 3 + ky) * 3 * CB;
        V acc[3][CB];
        for (int kx = 0; kx < 3; ++kx)
          for (int j = 0; j < CB; ++j) acc[kx][j] = slot[kx * CB + j];
        for (int y = y0; y < y1; ++y) {
          const float* xrow = xp.plane(ci) + static_cast<std::size_t>(y + ky) * xp.stride;
          const float* grow = gp.data() + static_cast<std::size_t>(y) * gs;
          for (int x0 = 0; x0 < w; x0 += 16) {
            V xv[3];
            for (int kx = 0; kx < 3; ++kx) std::memcpy(&xv[kx], xrow + x0 + kx, sizeof(V));
            for (int j = 0; j < CB; ++j) {
              V gv;
              std::memcpy(&gv, grow + static_cast<std::size_t>(j) * h * gs + x0, sizeof(V));
              for (int kx = 0; kx < 3; ++kx) acc[kx][j] += xv[kx] * gv;
            }
          }
        }
        for (int kx = 0; kx < 3; ++kx)
          for (int j = 0; j < CB; ++j) slot[kx * CB + j] = acc[kx][j];
      }
    }
  }
  for (int ci = 0; ci < cin; ++ci) {
    for (int t = 0; t < 9; ++t) {
      float* dst = dwt + (static_cast<std::size_t>(t) * cin + ci) * cout + co_begin;
      for (int j = 0; j < CB; ++j) {
        float tmp[16];
        std::memcpy(tmp, &partial[(static_cast<std::size_t>(ci) * 9 + t) * CB + j], sizeof(V));
        float sum = 0.0f;
        for (float v : tmp) sum += v;
        dst[j] += sum;
      }
    }
  }
}

// Rows of the im2col matrix processed per GEMM when accumulating weight
// gradients; keeps the tile cache resident.
constexpr int kColumnTile = 2048;

}  // namespace

template <typename T>
Tensor4<T> conv_forward(Tensor4<T> input, const ConvSpec<T>& spec, ConvCache<T>& cache) {
  cache.columns = std::move(input);
  const Tensor4<T>& x = cache.columns;
  if (x.c != spec.in_channels) throw std::invalid_argument("conv_forward: channel mismatch");
  const int k = spec.kernel;
  if (k != 1 && k != 3) throw std::invalid_argument("conv_forward: only 1x1 and 3x3 kernels are supported");
  cache.in_h = x.h;
  cache.in_w = x.w;
  cache.in_c = x.c;
  cache.kernel = k;
  Tensor4<T> y(x.n, x.h, x.w, spec.out_channels);
  if (k == 1) {
    const long rows = static_cast<long>(x.n) * x.h * x.w;
    CMap<T> in(x.data.data(), rows, x.c);
    CMap<T> wt(spec.weight, spec.out_channels, x.c);
    Map<T> out(y.data.data(), rows, spec.out_channels);
    out.noalias() = in * wt.transpose();
    if (spec.bias != nullptr) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(spec.bias, spec.out_channels);
      out.rowwise() += b;
    }
    return y;
  }
  // [co][9][ci] -> [9][ci][co]
  const int cin = x.c, cout = spec.out_channels;
  std::vector<T> wt(static_cast<std::size_t>(9) * cin * cout);
  for (int o = 0; o < cout; ++o)
    for (int t = 0; t < 9; ++t)
      for (int ci = 0; ci < cin; ++ci)
        wt[(static_cast<std::size_t>(t) * cin + ci) * cout + o] = spec.weight[(static_cast<std::size_t>(o) * 9 + t) * cin + ci];
  for (int i = 0; i < x.n; ++i) conv3x3_image(x.image(i), x.h, x.w, cin, wt.data(), cout, spec.bias, y.image(i));
  return y;
}

template <typename T>
Tensor4<T> conv_backward(const Tensor4<T>& dy, const ConvSpec<T>& spec, T* dweight, T* dbias,
                         const ConvCache<T>& cache, bool need_dx) {
  const int k = cache.kernel;
  const int cin = cache.in_c, cout = spec.out_channels;
  const long rows = static_cast<long>(dy.n) * dy.h * dy.w;
  CMap<T> g(dy.data.data(), rows, cout);
  if (dbias != nullptr) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(dbias, cout);
    db += g.colwise().sum();
  }
  if (k == 1) {
    CMap<T> in(cache.columns.data.data(), rows, cin);
    Map<T> dw(dweight, cout, cin);
    dw.noalias() += g.transpose() * in;
    if (!need_dx) return {};
    CMap<T> wt(spec.weight, cout, cin);
    Tensor4<T> dx(dy.n, cache.in_h, cache.in_w, cin);
    Map<T> out(dx.data.data(), rows, cin);
    out.noalias() = g * wt;
    return dx;
  }

  const int h = cache.in_h, w = cache.in_w;
  const long kdim = 9L * cin;
  MatRM<T> dwt = MatRM<T>::Zero(kdim, cout);
  bool dw_done = false;
  if constexpr (std::is_same_v<T, float>) {
    if (cout % 8 == 0) {
      const int rb = std::max(1, 8192 / (w * (cin + cout)));
      for (int i = 0; i < dy.n; ++i) {
        const float* xi = cache.columns.image(i);
        const float* gi = dy.image(i);
        int co_vec = cout;
        if (cin < 8 && cout % 16 == 8) {
          // narrow input: planar kernel for the trailing 8 channels
          thread_local PlanarPad xpad;
          thread_local std::vector<float> gplanar;
          co_vec = cout - 8;
          pad_planar(xi, h, w, cin, xpad);
          planar_channels(gi, h, w, cout, co_vec, 8, xpad.stride, gplanar);
          conv3x3_dw_planar<8>(xpad, gplanar, h, w, cin, cout, co_vec, dwt.data());
        }
        for (int y0 = 0; y0 < h; y0 += rb) {
          const int y1 = std::min(h, y0 + rb);
          int co = 0;
          for (; co + 16 <= co_vec; co += 16) conv3x3_dw_cols<16>(xi, gi, h, w, cin, cout, co, y0, y1, dwt.data());
          for (; co + 8 <= co_vec; co += 8) conv3x3_dw_cols<8>(xi, gi, h, w, cin, cout, co, y0, y1, dwt.data());
        }
      }
      dw_done = true;
    }
  }
  std::vector<T> tile(dw_done ? 0 : static_cast<std::size_t>(kColumnTile) * kdim);
  const int tile_rows = std::max(1, kColumnTile / w);
  for (int i = 0; i < (dw_done ? 0 : dy.n); ++i) {
    const T* xin = cache.columns.image(i);
    for (int y0 = 0; y0 < h; y0 += tile_rows) {
      const int y1 = std::min(h, y0 + tile_rows);
      const long npx = static_cast<long>(y1 - y0) * w;
      // im2col restricted to rows [y0, y1)
      for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < w; ++x) {
          T* dst = tile.data() + ((static_cast<std::size_t>(y - y0) * w + x) * kdim);
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            for (int kx = 0; kx < 3; ++kx, dst += cin) {
              const int sx = x + kx - 1;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
                std::fill(dst, dst + cin, T{});
              } else {
                std::memcpy(dst, xin + (static_cast<std::size_t>(sy) * w + sx) * cin, sizeof(T) * cin);
              }
            }
          }
        }
      }
      CMap<T> cols(tile.data(), npx, kdim);
      CMap<T> gt(dy.image(i) + static_cast<std::size_t>(y0) * w * cout, npx, cout);
      dwt.noalias() += cols.transpose() * gt;
    }
  }
  Map<T> dw(dweight, cout, kdim);
  dw += dwt.transpose();
  if (!need_dx) return {};

  // dX is a 3x3 convolution of dY with the spatially flipped, channel
  // transposed kernel: [9][co][ci] with tap t' = 8 - t.
  std::vector<T> wt(static_cast<std::size_t>(9) * cout * cin);
  for (int o = 0; o < cout; ++o)
    for (int t = 0; t < 9; ++t)
      for (int ci = 0; ci < cin; ++ci)
        wt[(static_cast<std::size_t>(8 - t) * cout + o) * cin + ci] = spec.weight[(static_cast<std::size_t>(o) * 9 + t) * cin + ci];
  Tensor4<T> dx(dy.n, h, w, cin);
  for (int i = 0; i < dy.n; ++i) conv3x3_image(dy.image(i), h, w, cout, wt.data(), cin, static_cast<const T*>(nullptr), dx.image(i));
  return dx;
}

namespace {

// Rows per partial sum; partial sums are kept in T and folded into double.
constexpr std::size_t kNormChunk = 256;

template <typename T>
void channel_sums(const T* __restrict x, std::size_t m, int c, const double* shift, bool square, double* out) {
  std::vector<T> acc(c), sh(c);
  for (int ch = 0; ch < c; ++ch) sh[ch] = shift != nullptr ? static_cast<T>(shift[ch]) : T{};
  T* __restrict a = acc.data();
  const T* __restrict mu = sh.data();
  for (std::size_t r0 = 0; r0 < m; r0 += kNormChunk) {
    const std::size_t r1 = std::min(m, r0 + kNormChunk);
    std::fill(acc.begin(), acc.end(), T{});
    for (std::size_t r = r0; r < r1; ++r) {
      const T* row = x + r * c;
      if (square) {
        for (int ch = 0; ch < c; ++ch) {
          const T d = row[ch] - mu[ch];
          a[ch] += d * d;
        }
      } else {
        for (int ch = 0; ch < c; ++ch) a[ch] += row[ch];
      }
    }
    for (int ch = 0; ch < c; ++ch) out[ch] += acc[ch];
  }
}

}  // namespace

template <typename T>
Tensor4<T> norm_forward(const Tensor4<T>& x, const T* gamma, const T* beta, T* running_mean, T* running_var,
                        const NormSettings& s, NormCache<T>& cache) {
  const int c = x.c;
  const std::size_t m = x.size() / c;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (s.batch_stats) {
    channel_sums(x.data.data(), m, c, nullptr, false, mean.data());
    for (int ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(m);
    channel_sums(x.data.data(), m, c, mean.data(), true, var.data());
    for (int ch = 0; ch < c; ++ch) var[ch] /= static_cast<double>(m);
    if (s.update_running) {
      const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
      for (int ch = 0; ch < c; ++ch) {
        running_mean[ch] = static_cast<T>((1.0 - s.momentum) * running_mean[ch] + s.momentum * mean[ch]);
        running_var[ch] = static_cast<T>((1.0 - s.momentum) * running_var[ch] + s.momentum * var[ch] * unbias);
      }
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      var[ch] = running_var[ch];
    }
  }
  cache.batch_stats = s.batch_stats;
  cache.inv_std.resize(c);
  std::vector<T> mu(c), g(c), b(c);
  for (int ch = 0; ch < c; ++ch) {
    cache.inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var[ch] + s.eps));
    mu[ch] = static_cast<T>(mean[ch]);
    g[ch] = gamma[ch];
    b[ch] = beta[ch];
  }
  cache.x_hat = Tensor4<T>(x.n, x.h, x.w, c);
  Tensor4<T> y(x.n, x.h, x.w, c);
  const T floor = s.relu ? T{} : -std::numeric_limits<T>::infinity();
  const T* __restrict pmu = mu.data();
  const T* __restrict pis = cache.inv_std.data();
  const T* __restrict pg = g.data();
  const T* __restrict pb = b.data();
  const T* __restrict in = x.data.data();
  T* __restrict xh = cache.x_hat.data.data();
  T* __restrict out = y.data.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (int ch = 0; ch < c; ++ch) {
      const T v = (in[r * c + ch] - pmu[ch]) * pis[ch];
      xh[r * c + ch] = v;
      out[r * c + ch] = std::max(pg[ch] * v + pb[ch], floor);
    }
  }
  return y;
}

template <typename T>
Tensor4<T> norm_backward(const Tensor4<T>& dy, const T* gamma, T* dgamma, T* dbeta, const NormCache<T>& cache,
                         const T* relu_beta) {
  const int c = dy.c;
  // floor -inf keeps every gradient; otherwise gradients pass where the
  // forward output gamma * x_hat + beta was positive
  std::vector<T> gm(c), bm(c, T{});
  const T floor = relu_beta != nullptr ? T{} : -std::numeric_limits<T>::infinity();
  for (int ch = 0; ch < c; ++ch) {
    gm[ch] = gamma[ch];
    if (relu_beta != nullptr) bm[ch] = relu_beta[ch];
  }
  const T* __restrict mg = gm.data();
  const T* __restrict mb = bm.data();
  const std::size_t m = dy.size() / c;
  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  {
    std::vector<T> a1(c), a2(c);
    T* __restrict s1 = a1.data();
    T* __restrict s2 = a2.data();
    const T* __restrict gp = dy.data.data();
    const T* __restrict xp = cache.x_hat.data.data();
    for (std::size_t r0 = 0; r0 < m; r0 += kNormChunk) {
      const std::size_t r1 = std::min(m, r0 + kNormChunk);
      std::fill(a1.begin(), a1.end(), T{});
      std::fill(a2.begin(), a2.end(), T{});
      for (std::size_t r = r0; r < r1; ++r) {
        for (int ch = 0; ch < c; ++ch) {
          const T x = xp[r * c + ch];
          const T gv = mg[ch] * x + mb[ch] > floor ? gp[r * c + ch] : T{};
          s1[ch] += gv;
          s2[ch] += gv * x;
        }
      }
      for (int ch = 0; ch < c; ++ch) {
        sum_dy[ch] += a1[ch];
        sum_dy_xhat[ch] += a2[ch];
      }
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    dgamma[ch] += static_cast<T>(sum_dy_xhat[ch]);
    dbeta[ch] += static_cast<T>(sum_dy[ch]);
  }
  Tensor4<T> dx(dy.n, dy.h, dy.w, c);
  std::vector<T> a(c, T{}), b(c, T{}), k(c);
  for (int ch = 0; ch < c; ++ch) {
    k[ch] = static_cast<T>(gamma[ch] * cache.inv_std[ch]);
    if (cache.batch_stats) {
      a[ch] = static_cast<T>(sum_dy[ch] / static_cast<double>(m));
      b[ch] = static_cast<T>(sum_dy_xhat[ch] / static_cast<double>(m));
    }
  }
  const T* __restrict pk = k.data();
  const T* __restrict pa = a.data();
  const T* __restrict pb = b.data();
  const T* __restrict g = dy.data.data();
  const T* __restrict xh = cache.x_hat.data.data();
  T* __restrict out = dx.data.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (int ch = 0; ch < c; ++ch) {
      const T x = xh[r * c + ch];
      const T gv = mg[ch] * x + mb[ch] > floor ? g[r * c + ch] : T{};
      out[r * c + ch] = pk[ch] * (gv - pa[ch] - x * pb[ch]);
    }
  }
  return dx;
}

template <typename T>
void relu_inplace(Tensor4<T>& x) {
  for (T& v : x.data) v = v > T{} ? v : T{};
}

template <typename T>
void relu_backward_inplace(Tensor4<T>& dy, const Tensor4<T>& y) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy.data[i] = y.data[i] > T{} ? dy.data[i] : T{};
}

template <typename T>
Tensor4<T> avg_pool2(const Tensor4<T>& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw std::invalid_argument("avg_pool2: odd spatial size");
  Tensor4<T> y(x.n, x.h / 2, x.w / 2, x.c);
  const T quarter = static_cast<T>(0.25);
  for (int i = 0; i < x.n; ++i) {
    for (int oy = 0; oy < y.h; ++oy) {
      for (int ox = 0; ox < y.w; ++ox) {
        const T* a = &x.at(i, 2 * oy, 2 * ox, 0);
        const T* b = a + x.c;
        const T* d = &x.at(i, 2 * oy + 1, 2 * ox, 0);
        const T* e = d + x.c;
        T* out = &y.at(i, oy, ox, 0);
        for (int ch = 0; ch < x.c; ++ch) out[ch] = quarter * (a[ch] + b[ch] + d[ch] + e[ch]);
      }
    }
  }
  return y;
}

template <typename T>
Tensor4<T> avg_pool2_backward(const Tensor4<T>& dy) {
  Tensor4<T> dx(dy.n, dy.h * 2, dy.w * 2, dy.c);
  const T quarter = static_cast<T>(0.25);
  for (int i = 0; i < dy.n; ++i) {
    for (int y = 0; y < dx.h; ++y) {
      for (int x = 0; x < dx.w; ++x) {
        const T* g = &dy.at(i, y / 2, x / 2, 0);
        T* out = &dx.at(i, y, x, 0);
        for (int ch = 0; ch < dy.c; ++ch) out[ch] = quarter * g[ch];
      }
    }
  }
  return dx;
}

template <typename T>
Tensor4<T> resize_bilinear(const Tensor4<T>& x, int out_h, int out_w) {
  const ResizeTable ty = resize_table(x.h, out_h);
  const ResizeTable tx = resize_table(x.w, out_w);
  Tensor4<T> y(x.n, out_h, out_w, x.c);
  for (int i = 0; i < x.n; ++i) {
    for (int oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      for (int ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
        const T* p00 = &x.at(i, ty.i0[oy], tx.i0[ox], 0);
        const T* p01 = &x.at(i, ty.i0[oy], tx.i1[ox], 0);
        const T* p10 = &x.at(i, ty.i1[oy], tx.i0[ox], 0);
        const T* p11 = &x.at(i, ty.i1[oy], tx.i1[ox], 0);
        T* out = &y.at(i, oy, ox, 0);
        for (int ch = 0; ch < x.c; ++ch) out[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
      }
    }
  }
  return y;
}

template <typename T>
Tensor4<T> resize_bilinear_backward(const Tensor4<T>& dy, int in_h, int in_w) {
  const ResizeTable ty = resize_table(in_h, dy.h);
  const ResizeTable tx = resize_table(in_w, dy.w);
  Tensor4<T> dx(dy.n, in_h, in_w, dy.c);
  for (int i = 0; i < dy.n; ++i) {
    for (int oy = 0; oy < dy.h; ++oy) {
      const T fy = static_cast<T>(ty.frac[oy]);
      for (int ox = 0; ox < dy.w; ++ox) {
        const T fx = static_cast<T>(tx.frac[ox]);
        const T w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
        const T* g = &dy.at(i, oy, ox, 0);
        T* p00 = &dx.at(i, ty.i0[oy], tx.i0[ox], 0);
        T* p01 = &dx.at(i, ty.i0[oy], tx.i1[ox], 0);
        T* p10 = &dx.at(i, ty.i1[oy], tx.i0[ox], 0);
        T* p11 = &dx.at(i, ty.i1[oy], tx.i1[ox], 0);
        for (int ch = 0; ch < dy.c; ++ch) {
          p00[ch] += w00 * g[ch];
          p01[ch] += w01 * g[ch];
          p10[ch] += w10 * g[ch];
          p11[ch] += w11 * g[ch];
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& parts) {
  int total = 0;
  for (const auto* p : parts) total += p->c;
  const Tensor4<T>& first = *parts.front();
  Tensor4<T> y(first.n, first.h, first.w, total);
  const std::size_t pixels = static_cast<std::size_t>(first.n) * first.h * first.w;
  int offset = 0;
  for (const auto* p : parts) {
    if (p->n != first.n || p->h != first.h || p->w != first.w) throw std::invalid_argument("concat_channels: shape mismatch");
    for (std::size_t r = 0; r < pixels; ++r) {
      std::memcpy(y.data.data() + r * total + offset, p->data.data() + r * p->c, sizeof(T) * p->c);
    }
    offset += p->c;
  }
  return y;
}

template <typename T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& dy, const std::vector<int>& widths) {
  std::vector<Tensor4<T>> out;
  const std::size_t pixels = static_cast<std::size_t>(dy.n) * dy.h * dy.w;
  int offset = 0;
  for (int wdt : widths) {
    Tensor4<T> part(dy.n, dy.h, dy.w, wdt);
    for (std::size_t r = 0; r < pixels; ++r) {
      std::memcpy(part.data.data() + r * wdt, dy.data.data() + r * dy.c + offset, sizeof(T) * wdt);
    }
    offset += wdt;
    out.push_back(std::move(part));
  }
  return out;
}

#define TICA_INSTANTIATE_LAYERS(T)                                                                              \
  template Tensor4<T> conv_forward<T>(Tensor4<T>, const ConvSpec<T>&, ConvCache<T>&);                   \
  template Tensor4<T> conv_backward<T>(const Tensor4<T>&, const ConvSpec<T>&, T*, T*, const ConvCache<T>&,     \
                                       bool);                                                                  \
  template Tensor4<T> norm_forward<T>(const Tensor4<T>&, const T*, const T*, T*, T*, const NormSettings&,      \
                                      NormCache<T>&);                                                          \
  template Tensor4<T> norm_backward<T>(const Tensor4<T>&, const T*, T*, T*, const NormCache<T>&, const T*);              \
  template void relu_inplace<T>(Tensor4<T>&);                                                                  \
  template void relu_backward_inplace<T>(Tensor4<T>&, const Tensor4<T>&);                                      \
  template Tensor4<T> avg_pool2<T>(const Tensor4<T>&);                                                         \
  template Tensor4<T> avg_pool2_backward<T>(const Tensor4<T>&);                                                \
  template Tensor4<T> resize_bilinear<T>(const Tensor4<T>&, int, int);                                         \
  template Tensor4<T> resize_bilinear_backward<T>(const Tensor4<T>&, int, int);                                \
  template Tensor4<T> concat_channels<T>(const std::vector<const Tensor4<T>*>&);                               \
  template std::vector<Tensor4<T>> split_channels<T>(const Tensor4<T>&, const std::vector<int>&);

TICA_INSTANTIATE_LAYERS(float)
TICA_INSTANTIATE_LAYERS(double)

#undef TICA_INSTANTIATE_LAYERS

}  // namespace tica::layers
