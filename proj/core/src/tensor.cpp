#include "tdvae/tensor.hpp"

#include <cmath>

namespace tdvae {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

bool Tensor::all_finite() const {
  for (double v : vec())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace tdvae
