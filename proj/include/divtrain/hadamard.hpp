#pragma once

#include <cstdint>
#include <vector>

namespace divtrain::gaas {

// Square +-1 matrix with pairwise orthogonal rows (H*H^T = k*I) and constant
// row sums. Entries are integers so the invariants are exact.
struct HadamardMatrix {
  std::int64_t order = 0;
  std::vector<int> entries;  // row-major, values in {-1, +1}

  int at(std::int64_t r, std::int64_t c) const { return entries[r * order + c]; }
};

// Supported orders: 4 and its Kronecker powers 16 and 64, plus 36 from a
// group-developed symmetric-design construction over Z6 x Z6. Other orders
// raise an error naming the supported set.
HadamardMatrix regular_hadamard(std::int64_t order);

std::vector<std::int64_t> supported_hadamard_orders();

}  // namespace divtrain::gaas
