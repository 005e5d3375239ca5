#pragma once

#include <vector>

#include "divtrain/model.hpp"

namespace divtrain::diversity {

// Per-member input-loss gradients for one batch, flattened to [B, d] rows
// (one row per example). With retain_graph the rows stay differentiable
// w.r.t. whatever built them.
struct GradSet {
  std::vector<ad::Var> grads;
  bool retain_graph = false;
  std::size_t members() const { return grads.size(); }
};

struct DivTrainConfig {
  double lambda = 0.5;
  std::size_t ensemble_size = 0;  // informational; checked when > 0
};

// For each member, the gradient of that member's mean CE loss w.r.t. the
// input batch. Each member gets its own input leaf, so member graphs stay
// independent.
GradSet input_gradients(const nn::Ensemble& ens, const Tensor& batch,
                        const std::vector<std::int64_t>& labels, bool retain_graph);

// <u,v> / (max(|u|,1e-12) * max(|v|,1e-12)), clamped to [-1, 1].
double cosine_similarity(const Tensor& u, const Tensor& v);
ad::Var cosine_similarity(const ad::Var& u, const ad::Var& v);

// Per unordered member pair: the mean over batch rows of the row-wise cosine
// similarity, clamped to [-1+1e-12, 1-1e-12]. This is the quantity both
// coherence and the alignment loss are built from.
ad::Var pair_mean_cosine(const ad::Var& ga, const ad::Var& gb);

// max over unordered pairs of pair_mean_cosine.
double coherence(const GradSet& g);

// log sum_{a<b} exp(cs_ab): smooth upper envelope of coherence, differentiable
// end-to-end when the GradSet retains its graph.
ad::Var gal(const GradSet& g);

struct DivTrainLoss {
  ad::Var loss;      // mean CE + lambda * GAL
  ad::Var mean_ce;
  ad::Var gal_term;  // null when lambda == 0
  double coherence_value = 0.0;
  std::vector<std::vector<ad::Var>> member_params;  // leaves, per member
};

// Builds the joint objective over all members; backward through `loss`
// reaches every member's parameters. With lambda == 0 the loss is exactly
// the mean CE (no alignment term is built).
DivTrainLoss divtrain_loss(const nn::Ensemble& ens, const Tensor& batch,
                           const std::vector<std::int64_t>& labels, const DivTrainConfig& cfg);

}  // namespace divtrain::diversity
