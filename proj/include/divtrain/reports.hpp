#pragma once

#include <string>
#include <vector>

#include "divtrain/config.hpp"
#include "divtrain/data.hpp"
#include "divtrain/gaas.hpp"
#include "divtrain/trainer.hpp"

namespace divtrain::cli {

// Train/test pair per the dataset section; synthetic seeds derive from the
// master seed.
std::pair<data::DatasetBundle, data::DatasetBundle> load_datasets(const ExperimentConfig& cfg);

// Per-input max pairwise cosine similarity of the member input gradients.
std::vector<double> per_input_coherence(const nn::Ensemble& ens, const data::DatasetBundle& d,
                                        std::int64_t max_inputs = 0);

struct CoherenceReport {
  std::vector<double> values;             // one per evaluated input
  std::vector<double> bin_edges;          // bins+1 edges over [-1, 1]
  std::vector<std::int64_t> bin_counts;   // sums to values.size()
};

CoherenceReport make_coherence_report(const std::vector<double>& values, std::int64_t bins);

// Commands behind the CLI's subcommands. Each writes its CSV outputs plus the
// resolved config into cfg.output_dir; reruns with identical inputs rewrite
// identical bytes.
void cmd_train(const ExperimentConfig& cfg);
void cmd_attack(const ExperimentConfig& cfg, const std::string& target_ckpt,
                const std::string& surrogate_ckpt);
void cmd_coherence(const ExperimentConfig& cfg, const std::string& ckpt);
void cmd_gaas(const ExperimentConfig& cfg, const std::string& ckpt);

}  // namespace divtrain::cli
