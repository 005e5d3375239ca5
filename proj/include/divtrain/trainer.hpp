#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "divtrain/attacks.hpp"
#include "divtrain/data.hpp"
#include "divtrain/diversity.hpp"
#include "divtrain/model.hpp"

namespace divtrain::train {

enum class Recipe { Base, Div, Ens, EnsDiv };

Recipe recipe_from_string(const std::string& name);
std::string recipe_name(Recipe r);

struct TrainConfig {
  Recipe recipe = Recipe::Base;
  int epochs = 5;
  std::int64_t batch_size = 64;
  double learning_rate = 0.001;
  double lambda = 0.5;              // alignment weight for div recipes
  double noise_epsilon = 0.3;       // companion noise dataset budget
  double adv_epsilon = 0.3;         // companion adversarial dataset budget
  data::AugmentConfig augment{2, 2, false, 0};
  std::uint64_t master_seed = 1;
};

struct AdamState {
  std::vector<Tensor> m;  // first moments, aligned with Parameters order
  std::vector<Tensor> v;  // second moments
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState like(const nn::Parameters& params);
};

// Bias-corrected moment update, in place on params.
void adam_step(nn::Parameters& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double clean_accuracy = 0.0;
  double mean_gal = 0.0;
  double mean_coherence = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  double clean_accuracy = 0.0;
  std::map<std::string, double> attack_accuracy;  // key: "<kind>@<epsilon>"
};

// Trains the ensemble in place. Recipes: base = mean CE on the augmented
// stream; div = mean CE + lambda*GAL on augmented + noise batches;
// ens = mean CE on augmented + adversarial batches (requires static_model);
// ens+div = the div objective on augmented + adversarial batches.
// eval data, when present, drives the per-epoch clean accuracy column.
RunMetrics train(nn::Ensemble& ens, const data::DatasetBundle& train_data,
                 const std::optional<data::DatasetBundle>& eval_data, const TrainConfig& cfg,
                 const nn::Model* static_model = nullptr);

// Crafts each configured attack on the surrogate and measures the target's
// prediction accuracy; neither ensemble is mutated.
RunMetrics evaluate_transfer(const nn::Ensemble& target, const nn::Ensemble& surrogate,
                             const data::DatasetBundle& testset,
                             const std::vector<attacks::AttackConfig>& attack_list,
                             std::uint64_t master_seed);

}  // namespace divtrain::train
