#pragma once

#include <filesystem>

#include "tica/image.hpp"

namespace tica {

/// 8-bit PNG in, values scaled to [0,1]. Gray stays 1 channel, everything
/// else (palette, alpha) is flattened to 3-channel RGB.
ImageTensor read_png(const std::filesystem::path& path);

/// Values are clamped to [0,1] and rounded to 8 bits. 1 or 3 channels.
void write_png(const std::filesystem::path& path, const ImageTensor& img);

std::uint8_t quantize_u8(double v) noexcept;

}  // namespace tica
