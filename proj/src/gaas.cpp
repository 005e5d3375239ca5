#include "divtrain/gaas.hpp"

#include <algorithm>
#include <map>

#include "divtrain/attacks.hpp"

namespace divtrain::gaas {

std::vector<Tensor> gaas_directions(const Tensor& gradient, const HadamardMatrix& h, double eps) {
  const std::int64_t d = gradient.numel();
  if (h.order > d)
    throw ValueError("gaas_directions: order " + std::to_string(h.order) +
                     " exceeds input dimension " + std::to_string(d));
  const Tensor s = sign(gradient);
  std::vector<Tensor> dirs;
  dirs.reserve(static_cast<std::size_t>(h.order));
  for (std::int64_t r = 0; r < h.order; ++r) {
    Tensor dir(gradient.shape());
    for (std::int64_t j = 0; j < d; ++j) dir[j] = eps * h.at(r, j % h.order) * s[j];
    dirs.push_back(std::move(dir));
  }
  return dirs;
}

GaasReport gaas_evaluate(const nn::Ensemble& ens, const Tensor& images,
                         const std::vector<std::int64_t>& labels, const GaasOptions& opts) {
  if (images.dim(0) == 0 || labels.empty()) throw ValueError("gaas_evaluate: empty dataset");
  if (images.dim(0) != static_cast<std::int64_t>(labels.size()))
    throw ShapeError("gaas_evaluate: image/label count mismatch");

  std::vector<HadamardMatrix> mats;
  for (std::int64_t k : opts.orders) mats.push_back(regular_hadamard(k));

  const std::int64_t total = images.dim(0);
  const std::int64_t limit =
      opts.max_inputs > 0 ? std::min(opts.max_inputs, total) : total;
  const std::int64_t per = images.numel() / total;
  std::vector<std::int64_t> ishape = images.shape();
  ishape[0] = 1;

  GaasReport report;
  for (std::int64_t i = 0; i < limit; ++i) {
    Tensor x(ishape, std::vector<double>(images.data() + i * per, images.data() + (i + 1) * per));
    const std::int64_t y = labels[static_cast<std::size_t>(i)];

    if (opts.restrict_to_correct && nn::ensemble_predict(ens, x)[0] != y) continue;
    ++report.inputs_evaluated;

    // ensemble surrogate gradient: mean CE over members
    ad::Var xv = ad::leaf(x, true);
    ad::Var loss = attacks::surrogate_loss(ens, xv, {y});
    Tensor g = ad::grad(loss, {xv})[0]->value;

    for (const HadamardMatrix& h : mats) {
      for (double eps : opts.epsilons) {
        // evaluate all k probes as one batch
        std::vector<Tensor> dirs = gaas_directions(g, h, eps);
        std::vector<std::int64_t> pshape = ishape;
        pshape[0] = h.order;
        Tensor probes(pshape);
        for (std::int64_t r = 0; r < h.order; ++r)
          for (std::int64_t j = 0; j < per; ++j)
            probes[r * per + j] = x[j] + dirs[static_cast<std::size_t>(r)][j];
        std::vector<std::int64_t> pred = nn::ensemble_predict(ens, probes);
        std::int64_t successes = 0;
        for (std::int64_t r = 0; r < h.order; ++r)
          if (pred[static_cast<std::size_t>(r)] != y) ++successes;
        report.records.push_back({i, eps, h.order, successes});
      }
    }
  }

  // P(success_count >= j) per (epsilon, order), j = 1..order
  std::map<std::pair<double, std::int64_t>, std::vector<std::int64_t>> buckets;
  for (const GaasRecord& rec : report.records)
    buckets[{rec.epsilon, rec.order}].push_back(rec.success_count);
  for (const auto& [key, counts] : buckets) {
    for (std::int64_t j = 1; j <= key.second; ++j) {
      std::int64_t at_least = 0;
      for (std::int64_t c : counts)
        if (c >= j) ++at_least;
      report.curves.push_back(
          {key.first, key.second, j,
           counts.empty() ? 0.0
                          : static_cast<double>(at_least) / static_cast<double>(counts.size())});
    }
  }
  return report;
}

}  // namespace divtrain::gaas
