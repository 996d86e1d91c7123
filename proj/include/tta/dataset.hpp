#pragma once

#include <cstdint>
#include <vector>

#include "tta/matrix.hpp"

namespace tta {

struct LabeledSet {
  Matrix features;                   // N x d
  std::vector<std::uint32_t> labels; // N, values in [0, C)
};

}  // namespace tta
