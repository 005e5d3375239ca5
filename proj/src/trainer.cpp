#include "divtrain/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "divtrain/rng.hpp"

namespace divtrain::train {

namespace {

// Gathers rows `idx[from, from+count)` of a dataset into one batch.
data::DatasetBundle gather(const data::DatasetBundle& d, const std::vector<std::int64_t>& idx,
                           std::size_t from, std::size_t count) {
  const std::int64_t per = d.images.numel() / d.size();
  std::vector<std::int64_t> shape = d.images.shape();
  shape[0] = static_cast<std::int64_t>(count);
  Tensor images(shape);
  std::vector<std::int64_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::int64_t src = idx[from + i];
    std::copy(d.images.data() + src * per, d.images.data() + (src + 1) * per,
              images.data() + static_cast<std::int64_t>(i) * per);
    labels[i] = d.labels[static_cast<std::size_t>(src)];
  }
  return {std::move(images), std::move(labels), d.name};
}

data::DatasetBundle concat(const data::DatasetBundle& a, const data::DatasetBundle& b) {
  std::vector<std::int64_t> shape = a.images.shape();
  shape[0] = a.size() + b.size();
  Tensor images(shape);
  std::copy(a.images.data(), a.images.data() + a.images.numel(), images.data());
  std::copy(b.images.data(), b.images.data() + b.images.numel(),
            images.data() + a.images.numel());
  std::vector<std::int64_t> labels = a.labels;
  labels.insert(labels.end(), b.labels.begin(), b.labels.end());
  return {std::move(images), std::move(labels), a.name};
}

std::vector<std::int64_t> shuffled_indices(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::int64_t i = n - 1; i > 0; --i)
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
  return idx;
}

}  // namespace

Recipe recipe_from_string(const std::string& name) {
  if (name == "base") return Recipe::Base;
  if (name == "div") return Recipe::Div;
  if (name == "ens") return Recipe::Ens;
  if (name == "ens+div" || name == "ens-div") return Recipe::EnsDiv;
  throw ValueError("unknown recipe '" + name + "' (expected base, div, ens or ens+div)");
}

std::string recipe_name(Recipe r) {
  switch (r) {
    case Recipe::Base: return "base";
    case Recipe::Div: return "div";
    case Recipe::Ens: return "ens";
    case Recipe::EnsDiv: return "ens+div";
  }
  return "?";
}

AdamState AdamState::like(const nn::Parameters& params) {
  AdamState s;
  for (const nn::NamedTensor& nt : params.items) {
    s.m.push_back(Tensor::zeros(nt.tensor.shape()));
    s.v.push_back(Tensor::zeros(nt.tensor.shape()));
  }
  return s;
}

void adam_step(nn::Parameters& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr) {
  if (grads.size() != params.items.size())
    throw ShapeError("adam_step: gradient count does not match parameter count");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.items.size(); ++p) {
    Tensor& theta = params.items[p].tensor;
    const Tensor& g = grads[p];
    if (!theta.same_shape(g))
      throw ShapeError("adam_step: gradient shape " + g.shape_str() +
                       " does not match parameter " + params.items[p].name + " " +
                       theta.shape_str());
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (std::int64_t i = 0; i < theta.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

RunMetrics train(nn::Ensemble& ens, const data::DatasetBundle& train_data,
                 const std::optional<data::DatasetBundle>& eval_data, const TrainConfig& cfg,
                 const nn::Model* static_model) {
  if (ens.members.empty()) throw ValueError("train: empty ensemble");
  const bool with_gal = cfg.recipe == Recipe::Div || cfg.recipe == Recipe::EnsDiv;
  const bool with_companion = cfg.recipe != Recipe::Base;
  const bool companion_is_adv = cfg.recipe == Recipe::Ens || cfg.recipe == Recipe::EnsDiv;
  if (with_gal && ens.size() < 2)
    throw ValueError("train: div recipes need an ensemble of at least 2 members");
  if (companion_is_adv && static_model == nullptr)
    throw ValueError("train: recipe " + recipe_name(cfg.recipe) +
                     " requires a static pretrained model");
  if (cfg.learning_rate <= 0.0) throw ValueError("train: learning rate must be positive");
  if (cfg.epochs < 1) throw ValueError("train: epochs must be >= 1");

  std::vector<AdamState> opt;
  for (const nn::Model& m : ens.members) opt.push_back(AdamState::like(m.params));

  diversity::DivTrainConfig div_cfg{with_gal ? cfg.lambda : 0.0, 0};
  RunMetrics metrics;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::string tag = std::to_string(epoch);
    // fresh augmentation stream each epoch
    data::AugmentConfig aug = cfg.augment;
    aug.seed = fanout_seed(cfg.master_seed, "augment/" + tag);
    data::DatasetBundle primary = data::augment(train_data, aug);

    std::optional<data::DatasetBundle> companion;
    if (with_companion) {
      if (companion_is_adv)
        companion = data::make_adv_dataset(*static_model, train_data, cfg.adv_epsilon,
                                           fanout_seed(cfg.master_seed, "adv/" + tag));
      else
        companion = data::make_noise_dataset(
            train_data, data::NoiseConfig::from_epsilon(cfg.noise_epsilon),
            fanout_seed(cfg.master_seed, "noise/" + tag));
    }

    std::vector<std::int64_t> order_a =
        shuffled_indices(primary.size(), fanout_seed(cfg.master_seed, "shuffle-a/" + tag));
    std::vector<std::int64_t> order_b =
        with_companion
            ? shuffled_indices(companion->size(), fanout_seed(cfg.master_seed, "shuffle-b/" + tag))
            : std::vector<std::int64_t>{};

    // each batch draws half from the augmented stream and half from the
    // companion set, so one epoch passes over both exactly once
    const std::int64_t half = std::max<std::int64_t>(1, cfg.batch_size / 2);
    const std::int64_t stride = with_companion ? half : cfg.batch_size;

    double loss_sum = 0.0, gal_sum = 0.0, coh_sum = 0.0;
    std::int64_t steps = 0, gal_steps = 0;
    for (std::int64_t start = 0; start < primary.size(); start += stride) {
      const std::int64_t count = std::min(stride, primary.size() - start);
      data::DatasetBundle batch = gather(primary, order_a, static_cast<std::size_t>(start),
                                         static_cast<std::size_t>(count));
      if (with_companion) {
        data::DatasetBundle other = gather(*companion, order_b, static_cast<std::size_t>(start),
                                           static_cast<std::size_t>(count));
        batch = concat(batch, other);
      }

      diversity::DivTrainLoss obj =
          diversity::divtrain_loss(ens, batch.images, batch.labels, div_cfg);
      const double loss_value = obj.loss->value.item();
      if (!std::isfinite(loss_value))
        throw Error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch + 1));
      loss_sum += loss_value;
      ++steps;
      if (with_gal) {
        gal_sum += obj.gal_term->value.item();
        coh_sum += obj.coherence_value;
        ++gal_steps;
      }

      std::vector<ad::Var> all_leaves;
      for (const auto& member : obj.member_params)
        all_leaves.insert(all_leaves.end(), member.begin(), member.end());
      std::vector<ad::Var> grads = ad::grad(obj.loss, all_leaves, /*create_graph=*/false);

      std::size_t cursor = 0;
      for (std::size_t mi = 0; mi < ens.size(); ++mi) {
        std::vector<Tensor> member_grads;
        member_grads.reserve(obj.member_params[mi].size());
        for (std::size_t p = 0; p < obj.member_params[mi].size(); ++p)
          member_grads.push_back(grads[cursor++]->value);
        adam_step(ens.members[mi].params, member_grads, opt[mi], cfg.learning_rate);
      }
    }

    EpochMetrics em;
    em.epoch = epoch + 1;
    em.train_loss = loss_sum / static_cast<double>(std::max<std::int64_t>(1, steps));
    if (eval_data) em.clean_accuracy = nn::accuracy(ens, eval_data->images, eval_data->labels);
    if (with_gal && gal_steps > 0) {
      em.mean_gal = gal_sum / static_cast<double>(gal_steps);
      em.mean_coherence = coh_sum / static_cast<double>(gal_steps);
    } else if (ens.size() >= 2) {
      // probe batch for recipes that do not compute the alignment terms
      const std::int64_t probe = std::min<std::int64_t>(64, train_data.size());
      data::DatasetBundle pb = data::slice(train_data, 0, probe);
      diversity::GradSet gs = diversity::input_gradients(ens, pb.images, pb.labels, false);
      em.mean_coherence = diversity::coherence(gs);
      em.mean_gal = diversity::gal(gs)->value.item();
    }
    metrics.epochs.push_back(em);
  }

  if (eval_data)
    metrics.clean_accuracy = metrics.epochs.empty() ? 0.0 : metrics.epochs.back().clean_accuracy;
  return metrics;
}

RunMetrics evaluate_transfer(const nn::Ensemble& target, const nn::Ensemble& surrogate,
                             const data::DatasetBundle& testset,
                             const std::vector<attacks::AttackConfig>& attack_list,
                             std::uint64_t master_seed) {
  RunMetrics metrics;
  metrics.clean_accuracy = nn::accuracy(target, testset.images, testset.labels);

  constexpr std::int64_t kShard = 100;
  for (const attacks::AttackConfig& cfg : attack_list) {
    const std::string name =
        attacks::attack_kind_name(cfg.kind) + "@" + std::to_string(cfg.epsilon);
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < testset.size(); start += kShard) {
      const std::int64_t count = std::min(kShard, testset.size() - start);
      data::DatasetBundle shard = data::slice(testset, start, count);
      const std::uint64_t seed =
          fanout_seed(master_seed, "attack/" + name + "/" + std::to_string(start));
      attacks::AdvBatch adv = attacks::run_attack(surrogate, shard.images, shard.labels, cfg, seed);
      std::vector<std::int64_t> pred = nn::ensemble_predict(target, adv.perturbed);
      for (std::int64_t i = 0; i < count; ++i)
        if (pred[static_cast<std::size_t>(i)] == shard.labels[static_cast<std::size_t>(i)])
          ++correct;
    }
    metrics.attack_accuracy[name] =
        100.0 * static_cast<double>(correct) / static_cast<double>(testset.size());
  }
  return metrics;
}

}  // namespace divtrain::train
