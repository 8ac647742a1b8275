#include "tica/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace tica {

std::uint8_t quantize_u8(double v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

ImageTensor read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw std::runtime_error("cannot read PNG '" + path.string() + "': " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = gray ? 1 : 3;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + msg);
  }
  ImageTensor out(static_cast<int>(img.height), static_cast<int>(img.width), channels);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(buf[i] / 255.0);
  return out;
}

void write_png(const std::filesystem::path& path, const ImageTensor& src) {
  if (src.channels() != 1 && src.channels() != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
  if (src.empty()) throw std::invalid_argument("write_png: empty image");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(src.cols());
  img.height = static_cast<png_uint_32>(src.rows());
  img.format = src.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) buf[i] = quantize_u8(src[i]);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

}  // namespace tica
