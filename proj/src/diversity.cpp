#include "divtrain/diversity.hpp"

#include <cmath>

namespace divtrain::diversity {

namespace {

constexpr double kNormFloor = 1e-12;
constexpr double kCsMargin = 1e-12;

// sqrt(max(sum v^2, floor^2)) == max(||v||, floor), with a well-defined
// gradient (zero below the floor).
ad::Var guarded_row_norm(const ad::Var& g) {
  return ad::sqrt(ad::clamp_min(ad::row_sum(ad::square(g)), kNormFloor * kNormFloor));
}

void check_pairable(const GradSet& g) {
  if (g.members() < 2) throw ValueError("gradient set needs at least 2 members");
  for (std::size_t i = 1; i < g.members(); ++i)
    if (!g.grads[i]->value.same_shape(g.grads[0]->value))
      throw ShapeError("gradient set members disagree in shape: " +
                       g.grads[0]->value.shape_str() + " vs " + g.grads[i]->value.shape_str());
}

}  // namespace

GradSet input_gradients(const nn::Ensemble& ens, const Tensor& batch,
                        const std::vector<std::int64_t>& labels, bool retain_graph) {
  if (batch.rank() != 4) throw ShapeError("input_gradients: batch must be [B,C,H,W]");
  const std::int64_t bsz = batch.dim(0);
  const std::int64_t dim = batch.numel() / bsz;

  GradSet set;
  set.retain_graph = retain_graph;
  for (const nn::Model& m : ens.members) {
    ad::Var x = ad::leaf(batch, true);
    ad::Var logits = nn::forward_logits(m.spec, nn::param_leaves(m.params, false), x);
    ad::Var loss = ad::log_softmax_nll(logits, labels);
    ad::Var g = ad::grad(loss, {x}, retain_graph)[0];
    set.grads.push_back(ad::reshape(g, {bsz, dim}));
  }
  return set;
}

double cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.numel() != v.numel())
    throw ShapeError("cosine_similarity: length mismatch " + u.shape_str() + " vs " +
                     v.shape_str());
  double duv = 0.0, duu = 0.0, dvv = 0.0;
  for (std::int64_t i = 0; i < u.numel(); ++i) {
    duv += u[i] * v[i];
    duu += u[i] * u[i];
    dvv += v[i] * v[i];
  }
  const double cs = duv / (std::max(std::sqrt(duu), kNormFloor) *
                           std::max(std::sqrt(dvv), kNormFloor));
  return std::min(1.0, std::max(-1.0, cs));
}

ad::Var cosine_similarity(const ad::Var& u, const ad::Var& v) {
  if (u->value.numel() != v->value.numel())
    throw ShapeError("cosine_similarity: length mismatch " + u->value.shape_str() + " vs " +
                     v->value.shape_str());
  const std::int64_t n = u->value.numel();
  ad::Var ru = ad::reshape(u, {1, n});
  ad::Var rv = ad::reshape(v, {1, n});
  ad::Var cs = ad::div(ad::row_sum(ad::mul(ru, rv)),
                       ad::mul(guarded_row_norm(ru), guarded_row_norm(rv)));
  return ad::reshape(ad::clamp(cs, -1.0, 1.0), {1});
}

ad::Var pair_mean_cosine(const ad::Var& ga, const ad::Var& gb) {
  ad::Var cs_rows = ad::div(ad::row_sum(ad::mul(ga, gb)),
                            ad::mul(guarded_row_norm(ga), guarded_row_norm(gb)));
  return ad::reduce_mean(ad::clamp(cs_rows, -1.0 + kCsMargin, 1.0 - kCsMargin));
}

namespace {

std::vector<ad::Var> pair_cosines(const GradSet& g) {
  check_pairable(g);
  std::vector<ad::Var> cs;
  for (std::size_t a = 0; a < g.members(); ++a)
    for (std::size_t b = a + 1; b < g.members(); ++b)
      cs.push_back(pair_mean_cosine(g.grads[a], g.grads[b]));
  return cs;
}

ad::Var logsumexp(const std::vector<ad::Var>& terms) {
  ad::Var sum = ad::exp(terms[0]);
  for (std::size_t i = 1; i < terms.size(); ++i) sum = ad::add(sum, ad::exp(terms[i]));
  return ad::log(sum);
}

}  // namespace

double coherence(const GradSet& g) {
  double best = -1.0;
  for (const ad::Var& cs : pair_cosines(g)) best = std::max(best, cs->value.item());
  return best;
}

ad::Var gal(const GradSet& g) { return logsumexp(pair_cosines(g)); }

DivTrainLoss divtrain_loss(const nn::Ensemble& ens, const Tensor& batch,
                           const std::vector<std::int64_t>& labels, const DivTrainConfig& cfg) {
  if (cfg.lambda < 0.0) throw ValueError("divtrain_loss: lambda must be nonnegative");
  const std::size_t n = ens.size();
  if (n < 1) throw ValueError("divtrain_loss: empty ensemble");
  if (cfg.lambda > 0.0 && n < 2)
    throw ValueError("divtrain_loss: the alignment term needs at least 2 members");
  if (cfg.ensemble_size > 0 && cfg.ensemble_size != n)
    throw ValueError("divtrain_loss: configured ensemble size does not match ensemble");
  const std::int64_t bsz = batch.dim(0);
  const std::int64_t dim = batch.numel() / bsz;

  DivTrainLoss out;
  const bool with_gal = cfg.lambda > 0.0;

  GradSet set;
  set.retain_graph = with_gal;
  ad::Var ce_sum;
  for (const nn::Model& m : ens.members) {
    std::vector<ad::Var> leaves = nn::param_leaves(m.params, true);
    ad::Var x = ad::leaf(batch, with_gal);
    ad::Var logits = nn::forward_logits(m.spec, leaves, x);
    ad::Var ce = ad::log_softmax_nll(logits, labels);
    ce_sum = ce_sum ? ad::add(ce_sum, ce) : ce;
    if (with_gal) {
      ad::Var g = ad::grad(ce, {x}, /*create_graph=*/true)[0];
      set.grads.push_back(ad::reshape(g, {bsz, dim}));
    }
    out.member_params.push_back(std::move(leaves));
  }

  out.mean_ce = ad::scale(ce_sum, 1.0 / static_cast<double>(n));
  if (with_gal) {
    const std::vector<ad::Var> cs = pair_cosines(set);
    out.gal_term = logsumexp(cs);
    out.coherence_value = -1.0;
    for (const ad::Var& c : cs) out.coherence_value = std::max(out.coherence_value, c->value.item());
    out.loss = ad::add(out.mean_ce, ad::scale(out.gal_term, cfg.lambda));
  } else {
    out.loss = out.mean_ce;
  }
  return out;
}

}  // namespace divtrain::diversity
