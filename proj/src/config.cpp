#include "divtrain/config.hpp"

#include <fstream>
#include <set>

namespace divtrain::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(path + "." + key + ": unknown key");
}

template <typename T>
T get_or(const json& j, const std::string& path, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

double require_nonnegative(double v, const std::string& path) {
  if (v < 0.0) throw ConfigError(path + ": must be nonnegative");
  return v;
}

DatasetConfig parse_dataset(const json& j) {
  DatasetConfig d;
  if (j.is_null()) return d;
  reject_unknown(j, "dataset",
                 {"mode", "train_images", "train_labels", "test_images", "test_labels",
                  "train_size", "test_size", "synthetic"});
  d.mode = get_or<std::string>(j, "dataset", "mode", d.mode);
  if (d.mode != "synthetic" && d.mode != "idx")
    throw ConfigError("dataset.mode: expected 'synthetic' or 'idx', got '" + d.mode + "'");
  d.train_images = get_or<std::string>(j, "dataset", "train_images", "");
  d.train_labels = get_or<std::string>(j, "dataset", "train_labels", "");
  d.test_images = get_or<std::string>(j, "dataset", "test_images", "");
  d.test_labels = get_or<std::string>(j, "dataset", "test_labels", "");
  d.train_size = get_or<std::int64_t>(j, "dataset", "train_size", 0);
  d.test_size = get_or<std::int64_t>(j, "dataset", "test_size", 0);
  if (d.mode == "idx" &&
      (d.train_images.empty() || d.train_labels.empty() || d.test_images.empty() ||
       d.test_labels.empty()))
    throw ConfigError("dataset: idx mode needs train_images/train_labels/test_images/test_labels");
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    reject_unknown(s, "dataset.synthetic", {"kind", "per_class", "test_per_class", "shape"});
    d.synth_kind = get_or<std::string>(s, "dataset.synthetic", "kind", d.synth_kind);
    if (d.synth_kind != "digits" && d.synth_kind != "blobs")
      throw ConfigError("dataset.synthetic.kind: expected 'digits' or 'blobs'");
    d.per_class = get_or<std::int64_t>(s, "dataset.synthetic", "per_class", d.per_class);
    d.test_per_class =
        get_or<std::int64_t>(s, "dataset.synthetic", "test_per_class", d.test_per_class);
    if (d.per_class < 1 || d.test_per_class < 1)
      throw ConfigError("dataset.synthetic.per_class: must be >= 1");
    d.blob_shape = get_or<std::vector<std::int64_t>>(s, "dataset.synthetic", "shape", d.blob_shape);
    if (d.blob_shape.size() != 3) throw ConfigError("dataset.synthetic.shape: expected [C,H,W]");
  }
  return d;
}

ModelConfig parse_model(const json& j) {
  ModelConfig m;
  if (j.is_null()) throw ConfigError("model: section is required");
  reject_unknown(j, "model", {"spec", "members", "member_specs", "alpha"});
  m.alpha = get_or<double>(j, "model", "alpha", m.alpha);
  if (!(m.alpha > 0.0 && m.alpha < 1.0)) throw ConfigError("model.alpha: must be in (0,1)");
  if (j.contains("member_specs")) {
    m.member_specs = get_or<std::vector<std::string>>(j, "model", "member_specs", {});
  } else {
    const std::string spec = get_or<std::string>(j, "model", "spec", "");
    if (spec.empty()) throw ConfigError("model.spec: required (or provide model.member_specs)");
    const std::int64_t members = get_or<std::int64_t>(j, "model", "members", 1);
    if (members < 1) throw ConfigError("model.members: must be >= 1");
    m.member_specs.assign(static_cast<std::size_t>(members), spec);
  }
  if (m.member_specs.empty()) throw ConfigError("model.member_specs: must not be empty");
  return m;
}

train::TrainConfig parse_train(const json& j, const json& aug) {
  train::TrainConfig t;
  if (!j.is_null()) {
    reject_unknown(j, "train",
                   {"recipe", "epochs", "batch_size", "learning_rate", "lambda", "noise_epsilon",
                    "adv_epsilon"});
    try {
      t.recipe = train::recipe_from_string(get_or<std::string>(j, "train", "recipe", "base"));
    } catch (const ValueError& e) {
      throw ConfigError(std::string("train.recipe: ") + e.what());
    }
    t.epochs = static_cast<int>(get_or<std::int64_t>(j, "train", "epochs", t.epochs));
    if (t.epochs < 1) throw ConfigError("train.epochs: must be >= 1");
    t.batch_size = get_or<std::int64_t>(j, "train", "batch_size", t.batch_size);
    if (t.batch_size < 2) throw ConfigError("train.batch_size: must be >= 2");
    t.learning_rate = get_or<double>(j, "train", "learning_rate", t.learning_rate);
    if (t.learning_rate <= 0.0) throw ConfigError("train.learning_rate: must be positive");
    t.lambda = require_nonnegative(get_or<double>(j, "train", "lambda", t.lambda), "train.lambda");
    t.noise_epsilon = require_nonnegative(
        get_or<double>(j, "train", "noise_epsilon", t.noise_epsilon), "train.noise_epsilon");
    t.adv_epsilon = require_nonnegative(get_or<double>(j, "train", "adv_epsilon", t.adv_epsilon),
                                        "train.adv_epsilon");
  }
  if (!aug.is_null()) {
    reject_unknown(aug, "augment", {"pad", "shift", "flip"});
    t.augment.pad = get_or<std::int64_t>(aug, "augment", "pad", t.augment.pad);
    t.augment.shift = get_or<std::int64_t>(aug, "augment", "shift", t.augment.shift);
    t.augment.flip = get_or<bool>(aug, "augment", "flip", t.augment.flip);
    if (t.augment.pad < 0 || t.augment.shift < 0 || t.augment.shift > t.augment.pad)
      throw ConfigError("augment: need 0 <= shift <= pad");
  }
  return t;
}

std::vector<attacks::AttackConfig> parse_attacks(const json& j) {
  std::vector<attacks::AttackConfig> grid;
  if (j.is_null()) return grid;
  if (!j.is_array()) throw ConfigError("attacks: expected an array");
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& a = j.at(i);
    const std::string path = "attacks[" + std::to_string(i) + "]";
    reject_unknown(a, path, {"kind", "epsilon", "steps", "decay", "kappa", "step_size"});
    attacks::AttackKind kind;
    try {
      kind = attacks::attack_kind_from_string(get_or<std::string>(a, path, "kind", ""));
    } catch (const ValueError& e) {
      throw ConfigError(path + ".kind: " + e.what());
    }
    const double eps =
        require_nonnegative(get_or<double>(a, path, "epsilon", -1.0), path + ".epsilon");
    attacks::AttackConfig cfg = attacks::AttackConfig::make(kind, eps);
    cfg.steps = static_cast<int>(get_or<std::int64_t>(a, path, "steps", cfg.steps));
    if (cfg.steps < 1) throw ConfigError(path + ".steps: must be >= 1");
    cfg.decay = require_nonnegative(get_or<double>(a, path, "decay", cfg.decay), path + ".decay");
    cfg.kappa = require_nonnegative(get_or<double>(a, path, "kappa", cfg.kappa), path + ".kappa");
    cfg.step_size = require_nonnegative(get_or<double>(a, path, "step_size", cfg.step_size),
                                        path + ".step_size");
    grid.push_back(cfg);
  }
  return grid;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config root: expected an object");
  reject_unknown(j, "config",
                 {"dataset", "model", "train", "augment", "attacks", "gaas", "coherence",
                  "static_model_ckpt", "output_dir", "seed"});

  ExperimentConfig cfg;
  cfg.dataset = parse_dataset(j.contains("dataset") ? j.at("dataset") : json());
  cfg.model = parse_model(j.contains("model") ? j.at("model") : json());
  cfg.training = parse_train(j.contains("train") ? j.at("train") : json(),
                             j.contains("augment") ? j.at("augment") : json());
  cfg.attack_grid = parse_attacks(j.contains("attacks") ? j.at("attacks") : json());
  cfg.static_model_ckpt = get_or<std::string>(j, "config", "static_model_ckpt", "");

  if (j.contains("gaas")) {
    const json& g = j.at("gaas");
    reject_unknown(g, "gaas", {"orders", "epsilons", "max_inputs", "include_misclassified"});
    cfg.gaas_opts.orders =
        get_or<std::vector<std::int64_t>>(g, "gaas", "orders", cfg.gaas_opts.orders);
    cfg.gaas_opts.epsilons =
        get_or<std::vector<double>>(g, "gaas", "epsilons", cfg.gaas_opts.epsilons);
    for (double e : cfg.gaas_opts.epsilons) require_nonnegative(e, "gaas.epsilons");
    cfg.gaas_max_inputs = get_or<std::int64_t>(g, "gaas", "max_inputs", cfg.gaas_max_inputs);
    // the summary curves mirror the usual reading: only inputs the ensemble
    // already classifies correctly, unless widened explicitly
    cfg.gaas_opts.restrict_to_correct =
        !get_or<bool>(g, "gaas", "include_misclassified", false);
  } else {
    cfg.gaas_opts.restrict_to_correct = true;
  }
  cfg.gaas_opts.max_inputs = cfg.gaas_max_inputs;

  if (j.contains("coherence")) {
    const json& c = j.at("coherence");
    reject_unknown(c, "coherence", {"bins", "max_inputs"});
    cfg.coherence_bins = get_or<std::int64_t>(c, "coherence", "bins", cfg.coherence_bins);
    if (cfg.coherence_bins < 1) throw ConfigError("coherence.bins: must be >= 1");
    cfg.coherence_max_inputs =
        get_or<std::int64_t>(c, "coherence", "max_inputs", cfg.coherence_max_inputs);
  }

  cfg.output_dir = get_or<std::string>(j, "config", "output_dir", cfg.output_dir);
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
      throw ConfigError("seed: expected an integer");
    const std::int64_t s = j.at("seed").get<std::int64_t>();
    if (s < 0) throw ConfigError("seed: must be nonnegative");
    cfg.master_seed = static_cast<std::uint64_t>(s);
  }

  // validate member specs before any work happens; for idx datasets the
  // input shape is only known once files load, so that check happens there
  if (cfg.dataset.mode == "synthetic") {
    const nn::InputShape shape =
        cfg.dataset.synth_kind == "blobs"
            ? nn::InputShape{cfg.dataset.blob_shape[0], cfg.dataset.blob_shape[1],
                             cfg.dataset.blob_shape[2]}
            : nn::InputShape{1, 28, 28};
    for (const std::string& s : cfg.model.member_specs) {
      try {
        nn::parse_spec(s, shape, cfg.model.alpha);
      } catch (const Error& e) {
        throw ConfigError("model spec '" + s + "': " + e.what());
      }
    }
  }

  cfg.resolved = j;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace divtrain::cli
