#include "divtrain/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "divtrain/rng.hpp"

namespace divtrain::attacks {

namespace {

constexpr double kL1Floor = 1e-12;

// Gradient of the surrogate objective w.r.t. x, as a plain tensor.
Tensor surrogate_grad(const nn::Ensemble& surrogate, const Tensor& x,
                      const std::vector<std::int64_t>& labels) {
  ad::Var xv = ad::leaf(x, true);
  ad::Var loss = surrogate_loss(surrogate, xv, labels);
  return ad::grad(loss, {xv})[0]->value;
}

// Ball projection around the original, then pixel-domain clip; this order is
// fixed so iterative attacks are deterministic.
Tensor project_and_clip(const Tensor& x, const Tensor& origin, double eps) {
  return clip(project_linf(x, origin, eps), 0.0, 1.0);
}

// Per-example L1 normalization of a [B,C,H,W] gradient, guarded for
// zero-gradient examples.
Tensor normalize_l1_per_example(const Tensor& g) {
  const std::int64_t bsz = g.dim(0);
  const std::int64_t per = g.numel() / bsz;
  Tensor out(g.shape());
  for (std::int64_t b = 0; b < bsz; ++b) {
    double l1 = 0.0;
    for (std::int64_t i = 0; i < per; ++i) l1 += std::fabs(g[b * per + i]);
    const double denom = std::max(l1, kL1Floor);
    for (std::int64_t i = 0; i < per; ++i) out[b * per + i] = g[b * per + i] / denom;
  }
  return out;
}

void check_inputs(const Tensor& x, const std::vector<std::int64_t>& y, const AttackConfig& cfg) {
  if (x.rank() != 4) throw ShapeError("attack input must be [B,C,H,W], got " + x.shape_str());
  if (static_cast<std::int64_t>(y.size()) != x.dim(0))
    throw ShapeError("attack label count does not match batch size");
  if (cfg.epsilon < 0.0) throw ValueError("attack epsilon must be nonnegative");
  if (cfg.steps < 1) throw ValueError("attack steps must be >= 1");
  if (cfg.decay < 0.0) throw ValueError("attack decay must be nonnegative");
  if (cfg.kappa < 0.0) throw ValueError("attack confidence must be nonnegative");
}

}  // namespace

AttackKind attack_kind_from_string(const std::string& name) {
  if (name == "fgsm") return AttackKind::Fgsm;
  if (name == "r-fgsm" || name == "rfgsm") return AttackKind::RFgsm;
  if (name == "i-fgsm" || name == "ifgsm") return AttackKind::IFgsm;
  if (name == "mi-fgsm" || name == "mifgsm") return AttackKind::MiFgsm;
  if (name == "pgd-cw" || name == "pgdcw") return AttackKind::PgdCw;
  throw ValueError("unknown attack kind '" + name +
                   "' (expected fgsm, r-fgsm, i-fgsm, mi-fgsm or pgd-cw)");
}

std::string attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::RFgsm: return "r-fgsm";
    case AttackKind::IFgsm: return "i-fgsm";
    case AttackKind::MiFgsm: return "mi-fgsm";
    case AttackKind::PgdCw: return "pgd-cw";
  }
  return "?";
}

AttackConfig AttackConfig::make(AttackKind kind, double epsilon) {
  AttackConfig cfg;
  cfg.kind = kind;
  cfg.epsilon = epsilon;
  switch (kind) {
    case AttackKind::Fgsm:
    case AttackKind::RFgsm:
      cfg.steps = 1;
      break;
    case AttackKind::IFgsm:
    case AttackKind::MiFgsm:
      cfg.steps = 10;
      break;
    case AttackKind::PgdCw:
      cfg.steps = 30;
      cfg.step_size = epsilon / 10.0;
      break;
  }
  return cfg;
}

ad::Var surrogate_loss(const nn::Ensemble& surrogate, const ad::Var& x,
                       const std::vector<std::int64_t>& labels) {
  if (surrogate.members.empty()) throw ValueError("surrogate_loss: empty ensemble");
  ad::Var sum;
  for (const nn::Model& m : surrogate.members) {
    ad::Var logits = nn::forward_logits(m.spec, nn::param_leaves(m.params, false), x);
    ad::Var ce = ad::log_softmax_nll(logits, labels);
    sum = sum ? ad::add(sum, ce) : ce;
  }
  return ad::scale(sum, 1.0 / static_cast<double>(surrogate.size()));
}

double surrogate_loss(const nn::Ensemble& surrogate, const Tensor& x,
                      const std::vector<std::int64_t>& labels) {
  ad::NoGradGuard guard;
  return surrogate_loss(surrogate, ad::constant(x), labels)->value.item();
}

AdvBatch fgsm(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
              const AttackConfig& cfg) {
  check_inputs(x, y, cfg);
  Tensor step = sign(surrogate_grad(surrogate, x, y));
  Tensor adv = clip(axpy(x, cfg.epsilon, step), 0.0, 1.0);
  return {x, std::move(adv), cfg};
}

AdvBatch r_fgsm(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
                const AttackConfig& cfg, std::uint64_t seed) {
  check_inputs(x, y, cfg);
  Rng rng(seed);
  Tensor start(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    start[i] = x[i] + rng.uniform(-cfg.epsilon, cfg.epsilon);
  start = clip(start, 0.0, 1.0);
  Tensor step = sign(surrogate_grad(surrogate, start, y));
  Tensor adv = project_and_clip(axpy(start, cfg.epsilon, step), x, cfg.epsilon);
  return {x, std::move(adv), cfg};
}

AdvBatch i_fgsm(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
                const AttackConfig& cfg) {
  check_inputs(x, y, cfg);
  const double step_size = cfg.epsilon / static_cast<double>(cfg.steps);
  Tensor adv = x;
  for (int t = 0; t < cfg.steps; ++t) {
    Tensor step = sign(surrogate_grad(surrogate, adv, y));
    adv = project_and_clip(axpy(adv, step_size, step), x, cfg.epsilon);
  }
  return {x, std::move(adv), cfg};
}

AdvBatch mi_fgsm(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
                 const AttackConfig& cfg) {
  check_inputs(x, y, cfg);
  const double step_size = cfg.epsilon / static_cast<double>(cfg.steps);
  Tensor adv = x;
  Tensor momentum = Tensor::zeros(x.shape());
  for (int t = 0; t < cfg.steps; ++t) {
    Tensor g = normalize_l1_per_example(surrogate_grad(surrogate, adv, y));
    for (std::int64_t i = 0; i < momentum.numel(); ++i)
      momentum[i] = cfg.decay * momentum[i] + g[i];
    adv = project_and_clip(axpy(adv, step_size, sign(momentum)), x, cfg.epsilon);
  }
  return {x, std::move(adv), cfg};
}

AdvBatch pgd_cw(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
                const AttackConfig& cfg) {
  check_inputs(x, y, cfg);
  const double step_size = cfg.step_size > 0.0 ? cfg.step_size : cfg.epsilon / 10.0;
  const std::int64_t bsz = x.dim(0);

  Tensor adv = x;
  for (int t = 0; t < cfg.steps; ++t) {
    // mean member logits
    ad::Var xv = ad::leaf(adv, true);
    ad::Var zsum;
    for (const nn::Model& m : surrogate.members) {
      ad::Var logits = nn::forward_logits(m.spec, nn::param_leaves(m.params, false), xv);
      zsum = zsum ? ad::add(zsum, logits) : logits;
    }
    ad::Var z = ad::scale(zsum, 1.0 / static_cast<double>(surrogate.size()));
    const Tensor& zval = z->value;
    const std::int64_t classes = zval.dim(1);

    // hinge f_e = max(Z_y - max_{i != y} Z_i, -kappa); saturated rows
    // contribute no gradient. The class selection is a constant of this
    // iteration, making the objective a linear functional of the logits.
    Tensor coeff({bsz, classes});
    for (std::int64_t b = 0; b < bsz; ++b) {
      const std::int64_t label = y[static_cast<std::size_t>(b)];
      std::int64_t runner = label == 0 ? 1 : 0;
      for (std::int64_t j = 0; j < classes; ++j)
        if (j != label && zval[b * classes + j] > zval[b * classes + runner]) runner = j;
      const double margin = zval[b * classes + label] - zval[b * classes + runner];
      if (margin > -cfg.kappa) {
        coeff[b * classes + label] = 1.0;
        coeff[b * classes + runner] = -1.0;
      }
    }
    ad::Var hinge_sum = ad::reduce_sum(ad::mul(z, ad::constant(std::move(coeff))));
    Tensor g = ad::grad(hinge_sum, {xv})[0]->value;
    // descend the hinge: drive the true-class margin down
    adv = project_and_clip(axpy(adv, -step_size, sign(g)), x, cfg.epsilon);
  }
  return {x, std::move(adv), cfg};
}

AdvBatch run_attack(const nn::Ensemble& surrogate, const Tensor& x,
                    const std::vector<std::int64_t>& y, const AttackConfig& cfg,
                    std::uint64_t seed) {
  switch (cfg.kind) {
    case AttackKind::Fgsm: return fgsm(surrogate, x, y, cfg);
    case AttackKind::RFgsm: return r_fgsm(surrogate, x, y, cfg, seed);
    case AttackKind::IFgsm: return i_fgsm(surrogate, x, y, cfg);
    case AttackKind::MiFgsm: return mi_fgsm(surrogate, x, y, cfg);
    case AttackKind::PgdCw: return pgd_cw(surrogate, x, y, cfg);
  }
  throw ValueError("run_attack: unknown attack kind");
}

}  // namespace divtrain::attacks
