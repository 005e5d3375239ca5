#include "divtrain/hadamard.hpp"

#include <string>

#include "divtrain/error.hpp"

namespace divtrain::gaas {

namespace {

// Order 4 regular seed: orthogonal rows, every row sum 2.
const int kH4[16] = {
    1, 1, 1, -1,  //
    1, 1, -1, 1,  //
    1, -1, 1, 1,  //
    -1, 1, 1, 1,
};

HadamardMatrix order4() {
  HadamardMatrix h;
  h.order = 4;
  h.entries.assign(kH4, kH4 + 16);
  return h;
}

// Kronecker product; preserves orthogonality and constant row sums.
HadamardMatrix kronecker(const HadamardMatrix& a, const HadamardMatrix& b) {
  HadamardMatrix out;
  out.order = a.order * b.order;
  out.entries.resize(static_cast<std::size_t>(out.order) * out.order);
  for (std::int64_t ar = 0; ar < a.order; ++ar)
    for (std::int64_t br = 0; br < b.order; ++br)
      for (std::int64_t ac = 0; ac < a.order; ++ac)
        for (std::int64_t bc = 0; bc < b.order; ++bc)
          out.entries[(ar * b.order + br) * out.order + ac * b.order + bc] =
              a.at(ar, ac) * b.at(br, bc);
  return out;
}

// Order 36 via H = J - 2M, where M is the group-developed incidence matrix of
// the (36,15,6) difference set formed by the three order-6 subgroup lines
// {i=0}, {j=0}, {i=j} of Z6 x Z6 minus the origin. Every nonzero difference
// occurs exactly 6 times, which makes the rows orthogonal with row sum 6.
HadamardMatrix order36() {
  auto in_difference_set = [](int di, int dj) {
    if (di == 0 && dj == 0) return false;
    return di == 0 || dj == 0 || di == dj;
  };
  HadamardMatrix h;
  h.order = 36;
  h.entries.resize(36 * 36);
  for (int gi = 0; gi < 36; ++gi) {
    for (int hi = 0; hi < 36; ++hi) {
      const int di = ((gi / 6) - (hi / 6) + 6) % 6;
      const int dj = ((gi % 6) - (hi % 6) + 6) % 6;
      h.entries[gi * 36 + hi] = in_difference_set(di, dj) ? -1 : 1;
    }
  }
  return h;
}

}  // namespace

std::vector<std::int64_t> supported_hadamard_orders() { return {4, 16, 36, 64}; }

HadamardMatrix regular_hadamard(std::int64_t order) {
  switch (order) {
    case 4: return order4();
    case 16: return kronecker(order4(), order4());
    case 36: return order36();
    case 64: return kronecker(kronecker(order4(), order4()), order4());
    default:
      throw ValueError("regular_hadamard: unsupported order " + std::to_string(order) +
                       " (supported: 4, 16, 36, 64)");
  }
}

}  // namespace divtrain::gaas
