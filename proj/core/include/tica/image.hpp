#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tica {

struct Size2 {
  int rows = 0;
  int cols = 0;

  std::size_t area() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  bool operator==(const Size2&) const = default;
};

std::string to_string(Size2 s);

/// Dense row-major image with interleaved channels (H x W x C).
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(int rows, int cols, int channels = 1, T fill = T{})
      : rows_(rows), cols_(cols), channels_(channels) {
    if (rows < 0 || cols < 0 || channels <= 0) {
      throw std::invalid_argument("Image: invalid shape");
    }
    data_.assign(static_cast<std::size_t>(rows) * cols * channels, fill);
  }
  Image(Size2 size, int channels = 1, T fill = T{}) : Image(size.rows, size.cols, channels, fill) {}

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int channels() const noexcept { return channels_; }
  Size2 size2() const noexcept { return {rows_, cols_}; }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(rows_) * cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int r, int c, int ch = 0) noexcept {
    return data_[(static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch];
  }
  const T& operator()(int r, int c, int ch = 0) const noexcept {
    return data_[(static_cast<std::size_t>(r) * cols_ + c) * channels_ + ch];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Image<U>& o) const noexcept {
    return rows_ == o.rows() && cols_ == o.cols() && channels_ == o.channels();
  }

  bool operator==(const Image&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

/// H x W x C light intensities in [0, 1].
using ImageTensor = Image<float>;
/// H x W probabilities (predictions) or {0, 1} labels (ground truth).
using ShadowMask = Image<double>;
/// H x W boolean mask stored as bytes.
using BoolMask = Image<std::uint8_t>;

template <typename To, typename From>
Image<To> image_cast(const Image<From>& src) {
  Image<To> out(src.rows(), src.cols(), src.channels());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<To>(src[i]);
  return out;
}

template <typename A, typename B>
void require_same_shape(const Image<A>& a, const Image<B>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" + to_string(a.size2()) + "x" +
                                std::to_string(a.channels()) + " vs " + to_string(b.size2()) + "x" +
                                std::to_string(b.channels()) + ")");
  }
}

bool is_binary(const ShadowMask& m) noexcept;

}  // namespace tica
