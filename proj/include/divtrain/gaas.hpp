#pragma once

#include <vector>

#include "divtrain/hadamard.hpp"
#include "divtrain/model.hpp"

namespace divtrain::gaas {

// Orthogonal gradient-aligned perturbations: row i of H is tiled cyclically
// across the input dimension and multiplied component-wise with
// epsilon * sign(gradient). Exactly orthogonal when dim % order == 0;
// otherwise pairwise inner products are bounded by eps^2 * (dim % order).
std::vector<Tensor> gaas_directions(const Tensor& gradient, const HadamardMatrix& h, double eps);

struct GaasRecord {
  std::int64_t input_id = 0;
  double epsilon = 0.0;
  std::int64_t order = 0;
  std::int64_t success_count = 0;
};

struct GaasCurvePoint {
  double epsilon = 0.0;
  std::int64_t order = 0;
  std::int64_t j = 0;       // direction count threshold, 1..order
  double probability = 0.0; // P(success_count >= j)
};

struct GaasReport {
  std::vector<GaasRecord> records;
  std::vector<GaasCurvePoint> curves;  // non-increasing in j per (epsilon, order)
  std::int64_t inputs_evaluated = 0;
};

struct GaasOptions {
  std::vector<std::int64_t> orders{4, 16, 64};
  std::vector<double> epsilons{0.03, 0.06, 0.09};
  bool restrict_to_correct = false;  // evaluate only initially correct inputs
  std::int64_t max_inputs = 0;       // 0 = all
};

// For each input: the ensemble's mean-CE input gradient defines the aligned
// directions; a direction succeeds when the ensemble prediction of x + r_i
// differs from the true label.
GaasReport gaas_evaluate(const nn::Ensemble& ens, const Tensor& images,
                         const std::vector<std::int64_t>& labels, const GaasOptions& opts);

}  // namespace divtrain::gaas
