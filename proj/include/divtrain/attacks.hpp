#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divtrain/model.hpp"

namespace divtrain::attacks {

enum class AttackKind { Fgsm, RFgsm, IFgsm, MiFgsm, PgdCw };

AttackKind attack_kind_from_string(const std::string& name);
std::string attack_kind_name(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::Fgsm;
  double epsilon = 0.1;   // l-inf budget in pixel units
  int steps = 1;          // iterative attacks; defaults applied per kind
  double decay = 1.0;     // momentum decay
  double kappa = 50.0;    // hinge confidence
  double step_size = 0.0; // 0 = epsilon/steps

  static AttackConfig make(AttackKind kind, double epsilon);
};

struct AdvBatch {
  Tensor originals;
  Tensor perturbed;
  AttackConfig config;
};

// Mean of member CE losses on (x, y); the objective every attack climbs.
ad::Var surrogate_loss(const nn::Ensemble& surrogate, const ad::Var& x,
                       const std::vector<std::int64_t>& labels);
double surrogate_loss(const nn::Ensemble& surrogate, const Tensor& x,
                      const std::vector<std::int64_t>& labels);

AdvBatch fgsm(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
              const AttackConfig& cfg);
AdvBatch r_fgsm(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
                const AttackConfig& cfg, std::uint64_t seed);
AdvBatch i_fgsm(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
                const AttackConfig& cfg);
AdvBatch mi_fgsm(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
                 const AttackConfig& cfg);
AdvBatch pgd_cw(const nn::Ensemble& surrogate, const Tensor& x, const std::vector<std::int64_t>& y,
                const AttackConfig& cfg);

// Dispatch on cfg.kind; seed is used by R-FGSM only.
AdvBatch run_attack(const nn::Ensemble& surrogate, const Tensor& x,
                    const std::vector<std::int64_t>& y, const AttackConfig& cfg,
                    std::uint64_t seed);

}  // namespace divtrain::attacks
