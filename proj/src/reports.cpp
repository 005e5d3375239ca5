#include "divtrain/reports.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "divtrain/checkpoint.hpp"
#include "divtrain/diversity.hpp"
#include "divtrain/rng.hpp"

namespace divtrain::cli {

namespace {

namespace fs = std::filesystem;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

void write_resolved_config(const ExperimentConfig& cfg, const fs::path& dir) {
  std::ofstream out = open_out(dir / "resolved_config.json");
  out << cfg.resolved.dump(2) << "\n";
}

void write_metrics(const train::RunMetrics& metrics, const fs::path& dir) {
  {
    std::ofstream out = open_out(dir / "metrics.csv");
    out << "# schema: divtrain-metrics-v1\n";
    out << "epoch,train_loss,clean_accuracy,mean_gal,mean_coherence\n";
    for (const train::EpochMetrics& e : metrics.epochs)
      out << e.epoch << "," << fmt("%.6f", e.train_loss) << "," << fmt("%.2f", e.clean_accuracy)
          << "," << fmt("%.6f", e.mean_gal) << "," << fmt("%.6f", e.mean_coherence) << "\n";
  }
  nlohmann::json j;
  j["clean_accuracy"] = metrics.clean_accuracy;
  j["attack_accuracy"] = metrics.attack_accuracy;
  j["epochs"] = nlohmann::json::array();
  for (const train::EpochMetrics& e : metrics.epochs)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"clean_accuracy", e.clean_accuracy},
                           {"mean_gal", e.mean_gal},
                           {"mean_coherence", e.mean_coherence}});
  std::ofstream out = open_out(dir / "metrics.json");
  out << j.dump(2) << "\n";
}

nn::InputShape dataset_shape(const data::DatasetBundle& d) { return d.input_shape(); }

}  // namespace

std::pair<data::DatasetBundle, data::DatasetBundle> load_datasets(const ExperimentConfig& cfg) {
  const DatasetConfig& d = cfg.dataset;
  data::DatasetBundle train_data, test_data;
  if (d.mode == "idx") {
    train_data = data::load_idx(d.train_images, d.train_labels);
    test_data = data::load_idx(d.test_images, d.test_labels);
  } else if (d.synth_kind == "digits") {
    const std::int64_t train_pc = d.train_size > 0 ? (d.train_size + 9) / 10 : d.per_class;
    const std::int64_t test_pc = d.test_size > 0 ? (d.test_size + 9) / 10 : d.test_per_class;
    train_data = data::synth_digits(train_pc, fanout_seed(cfg.master_seed, "data/train"));
    test_data = data::synth_digits(test_pc, fanout_seed(cfg.master_seed, "data/test"));
  } else {
    nn::InputShape shape{d.blob_shape[0], d.blob_shape[1], d.blob_shape[2]};
    train_data =
        data::synth_blobs(10, d.per_class, shape, fanout_seed(cfg.master_seed, "data/train"));
    test_data =
        data::synth_blobs(10, d.test_per_class, shape, fanout_seed(cfg.master_seed, "data/test"));
  }
  if (d.train_size > 0 && d.train_size < train_data.size())
    train_data = data::slice(train_data, 0, d.train_size);
  if (d.test_size > 0 && d.test_size < test_data.size())
    test_data = data::slice(test_data, 0, d.test_size);
  return {std::move(train_data), std::move(test_data)};
}

std::vector<double> per_input_coherence(const nn::Ensemble& ens, const data::DatasetBundle& d,
                                        std::int64_t max_inputs) {
  if (ens.size() < 2) throw ValueError("per_input_coherence: need at least 2 members");
  const std::int64_t total =
      max_inputs > 0 ? std::min<std::int64_t>(max_inputs, d.size()) : d.size();
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(total));

  constexpr std::int64_t kShard = 100;
  for (std::int64_t start = 0; start < total; start += kShard) {
    const std::int64_t count = std::min(kShard, total - start);
    data::DatasetBundle shard = data::slice(d, start, count);
    diversity::GradSet set =
        diversity::input_gradients(ens, shard.images, shard.labels, /*retain_graph=*/false);
    const std::int64_t dim = set.grads[0]->value.dim(1);
    for (std::int64_t row = 0; row < count; ++row) {
      double best = -1.0;
      for (std::size_t a = 0; a < set.members(); ++a) {
        for (std::size_t b = a + 1; b < set.members(); ++b) {
          const double* ga = set.grads[a]->value.data() + row * dim;
          const double* gb = set.grads[b]->value.data() + row * dim;
          Tensor ta({dim}, std::vector<double>(ga, ga + dim));
          Tensor tb({dim}, std::vector<double>(gb, gb + dim));
          best = std::max(best, diversity::cosine_similarity(ta, tb));
        }
      }
      values.push_back(best);
    }
  }
  return values;
}

CoherenceReport make_coherence_report(const std::vector<double>& values, std::int64_t bins) {
  CoherenceReport report;
  report.values = values;
  report.bin_edges.resize(static_cast<std::size_t>(bins + 1));
  report.bin_counts.assign(static_cast<std::size_t>(bins), 0);
  for (std::int64_t i = 0; i <= bins; ++i)
    report.bin_edges[static_cast<std::size_t>(i)] =
        -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(bins);
  for (double v : values) {
    std::int64_t bin = static_cast<std::int64_t>((v + 1.0) / 2.0 * static_cast<double>(bins));
    bin = std::min(bins - 1, std::max<std::int64_t>(0, bin));
    ++report.bin_counts[static_cast<std::size_t>(bin)];
  }
  return report;
}

void cmd_train(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  auto [train_data, test_data] = load_datasets(cfg);
  const nn::InputShape shape = dataset_shape(train_data);

  std::vector<nn::ModelSpec> specs;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.model.member_specs.size(); ++i) {
    specs.push_back(nn::parse_spec(cfg.model.member_specs[i], shape, cfg.model.alpha));
    seeds.push_back(fanout_seed(cfg.master_seed, "member-init/" + std::to_string(i)));
  }
  nn::Ensemble ens = nn::make_ensemble(specs, seeds);

  train::TrainConfig tc = cfg.training;
  tc.master_seed = cfg.master_seed;

  nn::Model static_model;
  const nn::Model* static_ptr = nullptr;
  if (tc.recipe == train::Recipe::Ens || tc.recipe == train::Recipe::EnsDiv) {
    if (cfg.static_model_ckpt.empty())
      throw ConfigError("static_model_ckpt: required for recipe " + train::recipe_name(tc.recipe));
    nn::Ensemble loaded = nn::load_checkpoint(cfg.static_model_ckpt);
    static_model = loaded.members.front();
    static_ptr = &static_model;
  }

  train::RunMetrics metrics = train::train(ens, train_data, test_data, tc, static_ptr);

  nn::save_checkpoint(ens, (dir / "ensemble.ckpt").string());
  write_metrics(metrics, dir);
  write_resolved_config(cfg, dir);
}

void cmd_attack(const ExperimentConfig& cfg, const std::string& target_ckpt,
                const std::string& surrogate_ckpt) {
  if (cfg.attack_grid.empty()) throw ConfigError("attacks: the attack grid is empty");
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  nn::Ensemble target = nn::load_checkpoint(target_ckpt);
  nn::Ensemble surrogate = nn::load_checkpoint(surrogate_ckpt);
  auto [train_data, test_data] = load_datasets(cfg);
  if (target.members.front().spec.input != test_data.input_shape())
    throw ShapeError("cmd_attack: checkpoint input shape does not match the test set");

  train::RunMetrics metrics =
      train::evaluate_transfer(target, surrogate, test_data, cfg.attack_grid, cfg.master_seed);

  std::ofstream out = open_out(dir / "attack_report.csv");
  out << "# schema: divtrain-attack-v1\n";
  out << "attack,epsilon,target_accuracy\n";
  out << "clean," << fmt("%.4f", 0.0) << "," << fmt("%.1f", metrics.clean_accuracy) << "\n";
  for (const attacks::AttackConfig& a : cfg.attack_grid) {
    const std::string key =
        attacks::attack_kind_name(a.kind) + "@" + std::to_string(a.epsilon);
    out << attacks::attack_kind_name(a.kind) << "," << fmt("%.4f", a.epsilon) << ","
        << fmt("%.1f", metrics.attack_accuracy.at(key)) << "\n";
  }
  write_resolved_config(cfg, dir);
}

void cmd_coherence(const ExperimentConfig& cfg, const std::string& ckpt) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  nn::Ensemble ens = nn::load_checkpoint(ckpt);
  if (ens.size() < 2) throw ValueError("cmd_coherence: checkpoint has fewer than 2 members");
  auto [train_data, test_data] = load_datasets(cfg);

  std::vector<double> values = per_input_coherence(ens, test_data, cfg.coherence_max_inputs);
  CoherenceReport report = make_coherence_report(values, cfg.coherence_bins);

  {
    std::ofstream out = open_out(dir / "coherence_values.csv");
    out << "# schema: divtrain-coherence-v1\n";
    out << "input_id,coherence\n";
    for (std::size_t i = 0; i < report.values.size(); ++i)
      out << i << "," << fmt("%.6f", report.values[i]) << "\n";
  }
  {
    std::ofstream out = open_out(dir / "coherence_hist.csv");
    out << "# schema: divtrain-coherence-hist-v1\n";
    out << "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < report.bin_counts.size(); ++b)
      out << fmt("%.6f", report.bin_edges[b]) << "," << fmt("%.6f", report.bin_edges[b + 1]) << ","
          << report.bin_counts[b] << "\n";
  }
  write_resolved_config(cfg, dir);
}

void cmd_gaas(const ExperimentConfig& cfg, const std::string& ckpt) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  nn::Ensemble ens = nn::load_checkpoint(ckpt);
  auto [train_data, test_data] = load_datasets(cfg);

  gaas::GaasReport report =
      gaas::gaas_evaluate(ens, test_data.images, test_data.labels, cfg.gaas_opts);

  {
    std::ofstream out = open_out(dir / "gaas_records.csv");
    out << "# schema: divtrain-gaas-v1\n";
    out << "input_id,epsilon,order,success_count\n";
    for (const gaas::GaasRecord& r : report.records)
      out << r.input_id << "," << fmt("%.4f", r.epsilon) << "," << r.order << ","
          << r.success_count << "\n";
  }
  {
    std::ofstream out = open_out(dir / "gaas_summary.csv");
    out << "# schema: divtrain-gaas-summary-v1\n";
    out << "epsilon,order,j,probability\n";
    for (const gaas::GaasCurvePoint& p : report.curves)
      out << fmt("%.4f", p.epsilon) << "," << p.order << "," << p.j << ","
          << fmt("%.6f", p.probability) << "\n";
  }
  write_resolved_config(cfg, dir);
}

}  // namespace divtrain::cli
