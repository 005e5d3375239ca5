#include <doctest.h>

#include <cmath>

#include "divtrain/checkpoint.hpp"
#include "divtrain/data.hpp"
#include "divtrain/rng.hpp"
#include "divtrain/trainer.hpp"

using namespace divtrain;

namespace {

bool params_identical(const nn::Ensemble& a, const nn::Ensemble& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t m = 0; m < a.size(); ++m) {
    const auto& pa = a.members[m].params.items;
    const auto& pb = b.members[m].params.items;
    if (pa.size() != pb.size()) return false;
    for (std::size_t p = 0; p < pa.size(); ++p)
      for (std::int64_t i = 0; i < pa[p].tensor.numel(); ++i)
        if (pa[p].tensor[i] != pb[p].tensor[i]) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adam: zero gradient leaves parameters in place") {
  nn::ModelSpec spec = nn::parse_spec("FC4", {1, 3, 1});
  nn::Parameters params = nn::init_params(spec, 2);
  nn::Parameters before = params;
  train::AdamState state = train::AdamState::like(params);

  std::vector<Tensor> zero;
  for (const auto& item : params.items) zero.push_back(Tensor::zeros(item.tensor.shape()));
  train::adam_step(params, zero, state, 0.01);

  CHECK(state.step == 1);
  for (std::size_t p = 0; p < params.items.size(); ++p)
    for (std::int64_t i = 0; i < params.items[p].tensor.numel(); ++i)
      CHECK(params.items[p].tensor[i] == before.items[p].tensor[i]);
}

TEST_CASE("adam: first step moves by roughly lr in the gradient sign") {
  // bias correction makes mhat/sqrt(vhat) ~= +-1 on the first step
  nn::ModelSpec spec = nn::parse_spec("FC2", {1, 2, 1});
  nn::Parameters params = nn::init_params(spec, 3);
  nn::Parameters before = params;
  train::AdamState state = train::AdamState::like(params);

  std::vector<Tensor> grads;
  for (const auto& item : params.items) grads.push_back(Tensor::full(item.tensor.shape(), 0.7));
  const double lr = 0.05;
  train::adam_step(params, grads, state, lr);

  for (std::size_t p = 0; p < params.items.size(); ++p)
    for (std::int64_t i = 0; i < params.items[p].tensor.numel(); ++i) {
      const double moved = before.items[p].tensor[i] - params.items[p].tensor[i];
      CHECK(moved == doctest::Approx(lr).epsilon(1e-6));
    }

  // mismatched shapes are rejected
  std::vector<Tensor> bad = grads;
  bad[0] = Tensor::zeros({1});
  CHECK_THROWS_AS(train::adam_step(params, bad, state, lr), ShapeError);
}

TEST_CASE("adam: descends a quadratic bowl") {
  nn::ModelSpec spec = nn::parse_spec("FC3", {1, 4, 1});
  nn::Parameters params = nn::init_params(spec, 4);
  train::AdamState state = train::AdamState::like(params);

  auto norm = [&]() {
    double s = 0.0;
    for (const auto& item : params.items)
      for (std::int64_t i = 0; i < item.tensor.numel(); ++i) s += item.tensor[i] * item.tensor[i];
    return std::sqrt(s);
  };

  double prev = norm();
  double start = prev;
  for (int step = 0; step < 200; ++step) {
    // f = ||theta||^2, grad = 2 theta
    std::vector<Tensor> grads;
    for (const auto& item : params.items) {
      Tensor g(item.tensor.shape());
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = 2.0 * item.tensor[i];
      grads.push_back(std::move(g));
    }
    train::adam_step(params, grads, state, 0.01);
    const double cur = norm();
    if (step > 20) CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
  CHECK(prev < 0.5 * start);
}

TEST_CASE("training is deterministic and actually learns") {
  data::DatasetBundle train_set = data::synth_digits(40, 1001);
  data::DatasetBundle test_set = data::synth_digits(20, 1002);

  nn::ModelSpec spec = nn::parse_spec("FC24-FC10", {1, 28, 28});
  train::TrainConfig tc;
  tc.recipe = train::Recipe::Base;
  tc.epochs = 4;
  tc.master_seed = 77;

  nn::Ensemble a = nn::make_ensemble({spec, spec}, {1, 2});
  train::RunMetrics ma = train::train(a, train_set, test_set, tc);
  nn::Ensemble b = nn::make_ensemble({spec, spec}, {1, 2});
  train::train(b, train_set, test_set, tc);
  CHECK(params_identical(a, b));
  CHECK(nn::checkpoint_digest(a) == nn::checkpoint_digest(b));

  // loss decreases front to back
  CHECK(ma.epochs.back().train_loss < ma.epochs.front().train_loss);
  CHECK(ma.epochs.size() == 4);

  // a different master seed walks a different path
  nn::Ensemble c = nn::make_ensemble({spec, spec}, {1, 2});
  train::TrainConfig other = tc;
  other.master_seed = 78;
  train::train(c, train_set, test_set, other);
  CHECK_FALSE(params_identical(a, c));
}

TEST_CASE("div recipe drives the alignment loss down") {
  data::DatasetBundle train_set = data::synth_digits(30, 2020);

  nn::ModelSpec spec = nn::parse_spec("FC16-FC10", {1, 28, 28});
  nn::Ensemble ens = nn::make_ensemble({spec, spec}, {5, 6});
  train::TrainConfig tc;
  tc.recipe = train::Recipe::Div;
  tc.lambda = 0.5;
  tc.epochs = 5;
  tc.noise_epsilon = 0.3;
  tc.master_seed = 9;
  train::RunMetrics m = train::train(ens, train_set, std::nullopt, tc);

  CHECK(m.epochs.back().mean_gal < m.epochs.front().mean_gal);
  // gal is computed from live batches for this recipe
  CHECK(m.epochs.front().mean_gal != 0.0);
}

TEST_CASE("recipe validation") {
  data::DatasetBundle train_set = data::synth_digits(5, 3);
  nn::ModelSpec spec = nn::parse_spec("FC10", {1, 28, 28});

  nn::Ensemble single = nn::make_ensemble({spec}, {1});
  train::TrainConfig div_cfg;
  div_cfg.recipe = train::Recipe::Div;
  CHECK_THROWS_AS(train::train(single, train_set, std::nullopt, div_cfg), ValueError);

  nn::Ensemble pair = nn::make_ensemble({spec, spec}, {1, 2});
  train::TrainConfig ens_cfg;
  ens_cfg.recipe = train::Recipe::Ens;
  CHECK_THROWS_AS(train::train(pair, train_set, std::nullopt, ens_cfg), ValueError);
}

TEST_CASE("evaluate_transfer: zero-budget attacks equal clean accuracy, no mutation") {
  data::DatasetBundle train_set = data::synth_digits(30, 501);
  data::DatasetBundle test_set = data::synth_digits(15, 502);

  nn::ModelSpec spec = nn::parse_spec("FC24-FC10", {1, 28, 28});
  nn::Ensemble target = nn::make_ensemble({spec, spec}, {11, 12});
  nn::Ensemble surrogate = nn::make_ensemble({spec, spec}, {13, 14});
  train::TrainConfig tc;
  tc.recipe = train::Recipe::Base;
  tc.epochs = 5;
  tc.master_seed = 21;
  train::train(target, train_set, std::nullopt, tc);
  train::TrainConfig ts = tc;
  ts.master_seed = 22;
  train::train(surrogate, train_set, std::nullopt, ts);

  const std::string target_digest = nn::checkpoint_digest(target);
  const std::string surrogate_digest = nn::checkpoint_digest(surrogate);

  std::vector<attacks::AttackConfig> grid;
  for (attacks::AttackKind kind :
       {attacks::AttackKind::Fgsm, attacks::AttackKind::RFgsm, attacks::AttackKind::IFgsm,
        attacks::AttackKind::MiFgsm, attacks::AttackKind::PgdCw})
    grid.push_back(attacks::AttackConfig::make(kind, 0.0));

  train::RunMetrics m = train::evaluate_transfer(target, surrogate, test_set, grid, 303);
  for (const auto& [name, acc] : m.attack_accuracy)
    CHECK(acc == doctest::Approx(m.clean_accuracy).epsilon(1e-12));

  CHECK(nn::checkpoint_digest(target) == target_digest);
  CHECK(nn::checkpoint_digest(surrogate) == surrogate_digest);
}

TEST_CASE("self-attack is at least as strong as transfer from an independent surrogate") {
  data::DatasetBundle train_set = data::synth_digits(60, 611);
  data::DatasetBundle test_set = data::synth_digits(30, 612);

  nn::ModelSpec spec = nn::parse_spec("FC32-FC10", {1, 28, 28});
  nn::Ensemble target = nn::make_ensemble({spec}, {31});
  nn::Ensemble surrogate = nn::make_ensemble({spec}, {41});
  train::TrainConfig tc;
  tc.recipe = train::Recipe::Base;
  tc.epochs = 8;
  tc.master_seed = 51;
  train::train(target, train_set, std::nullopt, tc);
  train::TrainConfig ts = tc;
  ts.master_seed = 52;
  train::train(surrogate, train_set, std::nullopt, ts);

  std::vector<attacks::AttackConfig> grid{
      attacks::AttackConfig::make(attacks::AttackKind::Fgsm, 0.1)};
  const double self_acc =
      train::evaluate_transfer(target, target, test_set, grid, 99).attack_accuracy.begin()->second;
  const double transfer_acc =
      train::evaluate_transfer(target, surrogate, test_set, grid, 99).attack_accuracy.begin()->second;
  CHECK(self_acc <= transfer_acc + 1e-9);
}

TEST_CASE("ens recipe consumes a static model") {
  data::DatasetBundle train_set = data::synth_digits(25, 711);

  nn::ModelSpec spec = nn::parse_spec("FC16-FC10", {1, 28, 28});
  nn::Ensemble pretrain = nn::make_ensemble({spec}, {61});
  train::TrainConfig tp;
  tp.recipe = train::Recipe::Base;
  tp.epochs = 5;
  tp.master_seed = 71;
  train::train(pretrain, train_set, std::nullopt, tp);
  const nn::Model static_model = pretrain.members.front();

  nn::Ensemble ens = nn::make_ensemble({spec, spec}, {62, 63});
  train::TrainConfig tc;
  tc.recipe = train::Recipe::Ens;
  tc.epochs = 2;
  tc.adv_epsilon = 0.3;
  tc.master_seed = 72;
  train::RunMetrics m = train::train(ens, train_set, std::nullopt, tc, &static_model);
  CHECK(m.epochs.size() == 2);
  CHECK(std::isfinite(m.epochs.back().train_loss));

  nn::Ensemble ens2 = nn::make_ensemble({spec, spec}, {64, 65});
  train::TrainConfig td = tc;
  td.recipe = train::Recipe::EnsDiv;
  td.lambda = 0.5;
  train::RunMetrics md = train::train(ens2, train_set, std::nullopt, td, &static_model);
  CHECK(std::isfinite(md.epochs.back().train_loss));
  CHECK(md.epochs.back().mean_gal != 0.0);
}

}  // TEST_SUITE
