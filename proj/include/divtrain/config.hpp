#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "divtrain/attacks.hpp"
#include "divtrain/gaas.hpp"
#include "divtrain/trainer.hpp"

namespace divtrain::cli {

struct DatasetConfig {
  std::string mode = "synthetic";  // "synthetic" or "idx"
  std::string train_images, train_labels, test_images, test_labels;
  std::int64_t train_size = 0;  // 0 = all
  std::int64_t test_size = 0;
  std::string synth_kind = "digits";  // "digits" or "blobs"
  std::int64_t per_class = 200;
  std::int64_t test_per_class = 100;
  std::vector<std::int64_t> blob_shape{1, 28, 28};
};

struct ModelConfig {
  std::vector<std::string> member_specs;
  double alpha = 0.1;
};

// Declarative experiment description. Unknown keys are rejected with the
// offending key path; all values are validated before any work starts.
struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  train::TrainConfig training;
  std::string static_model_ckpt;
  std::vector<attacks::AttackConfig> attack_grid;
  gaas::GaasOptions gaas_opts;
  std::int64_t gaas_max_inputs = 200;
  std::int64_t coherence_bins = 20;
  std::int64_t coherence_max_inputs = 0;  // 0 = all
  std::string output_dir = "out";
  std::uint64_t master_seed = 1;

  nlohmann::json resolved;  // config after defaults and overrides, for provenance
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

}  // namespace divtrain::cli
