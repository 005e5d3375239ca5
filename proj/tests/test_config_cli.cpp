#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "divtrain/checkpoint.hpp"
#include "divtrain/reports.hpp"
#include "divtrain/rng.hpp"

using namespace divtrain;
using nlohmann::json;

namespace {

json minimal_config() {
  return json{
      {"dataset",
       {{"mode", "synthetic"},
        {"synthetic", {{"kind", "digits"}, {"per_class", 20}, {"test_per_class", 8}}}}},
      {"model", {{"spec", "FC16-FC10"}, {"members", 2}}},
      {"train", {{"recipe", "base"}, {"epochs", 2}}},
      {"output_dir", "unused"},
      {"seed", 5},
  };
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config schema: unknown keys and bad values are rejected with paths") {
  json ok = minimal_config();
  CHECK_NOTHROW(cli::parse_config(ok));

  json unknown = minimal_config();
  unknown["trainx"] = json::object();
  CHECK_THROWS_WITH_AS(cli::parse_config(unknown), doctest::Contains("trainx"), ConfigError);

  json nested_unknown = minimal_config();
  nested_unknown["train"]["warmup"] = 3;
  CHECK_THROWS_WITH_AS(cli::parse_config(nested_unknown), doctest::Contains("train.warmup"),
                       ConfigError);

  json negative_lambda = minimal_config();
  negative_lambda["train"]["lambda"] = -0.5;
  CHECK_THROWS_WITH_AS(cli::parse_config(negative_lambda), doctest::Contains("train.lambda"),
                       ConfigError);

  json bad_recipe = minimal_config();
  bad_recipe["train"]["recipe"] = "divv";
  CHECK_THROWS_AS(cli::parse_config(bad_recipe), ConfigError);

  json bad_spec = minimal_config();
  bad_spec["model"]["spec"] = "C8-Q-FC10";
  CHECK_THROWS_AS(cli::parse_config(bad_spec), ConfigError);

  json bad_attack = minimal_config();
  bad_attack["attacks"] = json::array({{{"kind", "fgsm"}}});  // epsilon missing
  CHECK_THROWS_WITH_AS(cli::parse_config(bad_attack), doctest::Contains("epsilon"), ConfigError);
}

TEST_CASE("seed fan-out is stable and purpose-separated") {
  CHECK(fanout_seed(1, "member-init/0") == fanout_seed(1, "member-init/0"));
  CHECK(fanout_seed(1, "member-init/0") != fanout_seed(1, "member-init/1"));
  CHECK(fanout_seed(1, "member-init/0") != fanout_seed(2, "member-init/0"));
  CHECK(fanout_seed(1, "augment/0") != fanout_seed(1, "noise/0"));
}

TEST_CASE("cmd_train writes checkpoint, metrics and provenance; reruns are byte-identical") {
  TempDir dir("divtrain_cli_train");
  json j = minimal_config();
  j["output_dir"] = dir.path.string();
  cli::ExperimentConfig cfg = cli::parse_config(j);

  cli::cmd_train(cfg);
  for (const char* name : {"ensemble.ckpt", "metrics.csv", "metrics.json", "resolved_config.json"})
    CHECK(std::filesystem::exists(dir.path / name));

  const std::string ckpt1 = read_file(dir.path / "ensemble.ckpt");
  const std::string csv1 = read_file(dir.path / "metrics.csv");
  CHECK(csv1.rfind("# schema: divtrain-metrics-v1", 0) == 0);

  cli::cmd_train(cfg);
  CHECK(read_file(dir.path / "ensemble.ckpt") == ckpt1);
  CHECK(read_file(dir.path / "metrics.csv") == csv1);

  // resolved config is an exact copy of the experiment description
  CHECK(json::parse(read_file(dir.path / "resolved_config.json")) == j);
}

TEST_CASE("cmd_attack emits the grid with a clean row") {
  TempDir dir("divtrain_cli_attack");
  json j = minimal_config();
  j["output_dir"] = (dir.path / "train").string();
  j["attacks"] = json::array({
      {{"kind", "fgsm"}, {"epsilon", 0.0}},
      {{"kind", "fgsm"}, {"epsilon", 0.1}},
      {{"kind", "i-fgsm"}, {"epsilon", 0.1}, {"steps", 5}},
  });
  cli::ExperimentConfig cfg = cli::parse_config(j);
  cli::cmd_train(cfg);

  cfg.output_dir = (dir.path / "attack").string();
  const std::string ckpt = (dir.path / "train" / "ensemble.ckpt").string();
  cli::cmd_attack(cfg, ckpt, ckpt);

  const std::string csv = read_file(dir.path / "attack" / "attack_report.csv");
  CHECK(csv.rfind("# schema: divtrain-attack-v1", 0) == 0);
  REQUIRE(csv.find("clean,") != std::string::npos);
  REQUIRE(csv.find("i-fgsm,") != std::string::npos);

  // the zero-budget row equals the clean row
  std::istringstream lines(csv);
  std::string line, clean_acc, fgsm0_acc;
  while (std::getline(lines, line)) {
    if (line.rfind("clean,", 0) == 0) clean_acc = line.substr(line.rfind(',') + 1);
    if (line.rfind("fgsm,0.0000,", 0) == 0) fgsm0_acc = line.substr(line.rfind(',') + 1);
  }
  REQUIRE(!clean_acc.empty());
  CHECK(clean_acc == fgsm0_acc);

  CHECK_THROWS_AS(cli::cmd_attack(cfg, ckpt + ".missing", ckpt), IoError);
}

TEST_CASE("cmd_coherence: identical members give coherence 1 and bins sum to inputs") {
  TempDir dir("divtrain_cli_coh");
  json j = minimal_config();
  j["output_dir"] = dir.path.string();
  j["coherence"] = {{"bins", 20}, {"max_inputs", 30}};
  cli::ExperimentConfig cfg = cli::parse_config(j);

  // an ensemble of two identical members: save directly
  nn::ModelSpec spec = nn::parse_spec("FC16-FC10", {1, 28, 28});
  nn::Model m{spec, nn::init_params(spec, 123)};
  nn::Ensemble twins;
  twins.members = {m, m};
  const std::string ckpt = (dir.path / "twins.ckpt").string();
  nn::save_checkpoint(twins, ckpt);

  cli::cmd_coherence(cfg, ckpt);
  const std::string values = read_file(dir.path / "coherence_values.csv");
  std::istringstream lines(values);
  std::string line;
  std::getline(lines, line);  // schema
  std::getline(lines, line);  // header
  std::int64_t rows = 0;
  while (std::getline(lines, line)) {
    CHECK(line.substr(line.find(',') + 1) == "1.000000");
    ++rows;
  }
  CHECK(rows == 30);

  const std::string hist = read_file(dir.path / "coherence_hist.csv");
  std::istringstream hlines(hist);
  std::getline(hlines, line);
  std::getline(hlines, line);
  std::int64_t bins = 0, total = 0;
  while (std::getline(hlines, line)) {
    ++bins;
    total += std::stoll(line.substr(line.rfind(',') + 1));
  }
  CHECK(bins == 20);
  CHECK(total == rows);
}

TEST_CASE("cmd_gaas: curves are monotone and zero budget never succeeds") {
  TempDir dir("divtrain_cli_gaas");
  json j = minimal_config();
  j["output_dir"] = (dir.path / "train").string();
  j["gaas"] = {{"orders", json::array({4, 16})},
               {"epsilons", json::array({0.0, 0.3})},
               {"max_inputs", 12}};
  cli::ExperimentConfig cfg = cli::parse_config(j);
  cli::cmd_train(cfg);

  cfg.output_dir = (dir.path / "gaas").string();
  cli::cmd_gaas(cfg, (dir.path / "train" / "ensemble.ckpt").string());

  const std::string summary = read_file(dir.path / "gaas" / "gaas_summary.csv");
  CHECK(summary.rfind("# schema: divtrain-gaas-summary-v1", 0) == 0);
  std::istringstream lines(summary);
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  double prev = 2.0;
  std::string prev_key;
  while (std::getline(lines, line)) {
    const std::size_t c1 = line.find(','), c2 = line.find(',', c1 + 1),
                      c3 = line.find(',', c2 + 1);
    const std::string key = line.substr(0, c2);
    const double p = std::stod(line.substr(c3 + 1));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    if (key != prev_key) {
      prev = 2.0;
      prev_key = key;
    }
    CHECK(p <= prev + 1e-12);
    prev = p;
    if (line.rfind("0.0000,", 0) == 0) CHECK(p == 0.0);
  }

  // unsupported order is rejected before any work
  cfg.gaas_opts.orders = {5};
  CHECK_THROWS_AS(cli::cmd_gaas(cfg, (dir.path / "train" / "ensemble.ckpt").string()),
                  ValueError);
}

}  // TEST_SUITE
