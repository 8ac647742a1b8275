#include "tica/image.hpp"

namespace tica {

std::string to_string(Size2 s) { return std::to_string(s.rows) + "x" + std::to_string(s.cols); }

bool is_binary(const ShadowMask& m) noexcept {
  for (double v : m.data()) {
    if (v != 0.0 && v != 1.0) return false;
  }
  return true;
}

}  // namespace tica
