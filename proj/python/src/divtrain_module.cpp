// Python bindings for the core operations: dataset synthesis, ensemble
// construction and training, the attack family, alignment diagnostics and
// the aligned-subspace tooling.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "divtrain/attacks.hpp"
#include "divtrain/checkpoint.hpp"
#include "divtrain/data.hpp"
#include "divtrain/diversity.hpp"
#include "divtrain/gaas.hpp"
#include "divtrain/hadamard.hpp"
#include "divtrain/model.hpp"
#include "divtrain/trainer.hpp"

namespace py = pybind11;
using namespace divtrain;

namespace {

Tensor tensor_from(const std::vector<std::int64_t>& shape, const std::vector<double>& data) {
  return Tensor(shape, data);
}

nn::InputShape shape3(const std::vector<std::int64_t>& s) {
  if (s.size() != 3) throw ValueError("input_shape must be [C,H,W]");
  return {s[0], s[1], s[2]};
}

diversity::GradSet gradset_from(const std::vector<std::vector<double>>& vectors) {
  diversity::GradSet set;
  for (const auto& v : vectors)
    set.grads.push_back(ad::constant(Tensor({1, static_cast<std::int64_t>(v.size())}, v)));
  return set;
}

train::TrainConfig train_config(const std::string& recipe, int epochs, std::int64_t batch_size,
                                double learning_rate, double lambda, double noise_epsilon,
                                double adv_epsilon, std::uint64_t seed, std::int64_t augment_shift,
                                std::int64_t augment_pad) {
  train::TrainConfig cfg;
  cfg.recipe = train::recipe_from_string(recipe);
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.learning_rate = learning_rate;
  cfg.lambda = lambda;
  cfg.noise_epsilon = noise_epsilon;
  cfg.adv_epsilon = adv_epsilon;
  cfg.master_seed = seed;
  cfg.augment.shift = augment_shift;
  cfg.augment.pad = augment_pad;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_divtrain, m) {
  m.doc() = "diverse-ensemble training, transfer attacks and subspace diagnostics";

  py::register_exception<Error>(m, "DivtrainError");

  py::class_<Tensor>(m, "Tensor")
      .def(py::init(&tensor_from), py::arg("shape"), py::arg("data"))
      .def_property_readonly("shape", [](const Tensor& t) { return t.shape(); })
      .def_property_readonly("data", [](const Tensor& t) { return t.vec(); })
      .def("__len__", [](const Tensor& t) { return t.numel(); });

  py::class_<data::DatasetBundle>(m, "Dataset")
      .def_readonly("images", &data::DatasetBundle::images)
      .def_readonly("labels", &data::DatasetBundle::labels)
      .def_readonly("name", &data::DatasetBundle::name)
      .def("__len__", [](const data::DatasetBundle& d) { return d.size(); });

  py::class_<nn::Ensemble>(m, "Ensemble")
      .def_property_readonly("size", [](const nn::Ensemble& e) { return e.size(); })
      .def_property_readonly("specs", [](const nn::Ensemble& e) {
        std::vector<std::string> out;
        for (const nn::Model& mm : e.members) out.push_back(mm.spec.to_string());
        return out;
      });

  m.def(
      "parse_spec",
      [](const std::string& text, const std::vector<std::int64_t>& input_shape, double alpha) {
        return nn::parse_spec(text, shape3(input_shape), alpha).to_string();
      },
      py::arg("text"), py::arg("input_shape") = std::vector<std::int64_t>{1, 28, 28},
      py::arg("alpha") = 0.1, "validate a model spec string; returns its canonical form");

  m.def(
      "make_ensemble",
      [](const std::vector<std::string>& specs, const std::vector<std::uint64_t>& seeds,
         const std::vector<std::int64_t>& input_shape, double alpha) {
        std::vector<nn::ModelSpec> parsed;
        for (const std::string& s : specs) parsed.push_back(nn::parse_spec(s, shape3(input_shape), alpha));
        return nn::make_ensemble(parsed, seeds);
      },
      py::arg("specs"), py::arg("seeds"),
      py::arg("input_shape") = std::vector<std::int64_t>{1, 28, 28}, py::arg("alpha") = 0.1);

  m.def("save_checkpoint", &nn::save_checkpoint, py::arg("ensemble"), py::arg("path"));
  m.def("load_checkpoint", &nn::load_checkpoint, py::arg("path"));

  m.def("synth_digits", &data::synth_digits, py::arg("per_class"), py::arg("seed"));
  m.def(
      "synth_blobs",
      [](std::int64_t classes, std::int64_t per_class, const std::vector<std::int64_t>& dims,
         std::uint64_t seed) { return data::synth_blobs(classes, per_class, shape3(dims), seed); },
      py::arg("classes"), py::arg("per_class"), py::arg("dims"), py::arg("seed"));
  m.def("load_idx", &data::load_idx, py::arg("images_path"), py::arg("labels_path"));

  m.def(
      "train",
      [](nn::Ensemble& ens, const data::DatasetBundle& train_data, const std::string& recipe,
         int epochs, std::int64_t batch_size, double learning_rate, double lambda,
         double noise_epsilon, std::uint64_t seed, std::int64_t augment_shift,
         std::int64_t augment_pad) {
        train::RunMetrics metrics =
            train::train(ens, train_data, std::nullopt,
                         train_config(recipe, epochs, batch_size, learning_rate, lambda,
                                      noise_epsilon, 0.3, seed, augment_shift, augment_pad));
        py::list epochs_out;
        for (const auto& e : metrics.epochs) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["train_loss"] = e.train_loss;
          d["mean_gal"] = e.mean_gal;
          d["mean_coherence"] = e.mean_coherence;
          epochs_out.append(d);
        }
        return epochs_out;
      },
      py::arg("ensemble"), py::arg("train_data"), py::arg("recipe") = "base",
      py::arg("epochs") = 5, py::arg("batch_size") = 64, py::arg("learning_rate") = 0.001,
      py::arg("lambda_") = 0.5, py::arg("noise_epsilon") = 0.3, py::arg("seed") = 1,
      py::arg("augment_shift") = 2, py::arg("augment_pad") = 2,
      "train in place; returns per-epoch metrics");

  m.def("predict", &nn::ensemble_predict, py::arg("ensemble"), py::arg("images"));
  m.def(
      "accuracy",
      [](const nn::Ensemble& e, const data::DatasetBundle& d) {
        return nn::accuracy(e, d.images, d.labels);
      },
      py::arg("ensemble"), py::arg("dataset"));

  m.def(
      "attack",
      [](const nn::Ensemble& surrogate, const Tensor& images,
         const std::vector<std::int64_t>& labels, const std::string& kind, double epsilon,
         int steps, double decay, double kappa, std::uint64_t seed) {
        attacks::AttackConfig cfg =
            attacks::AttackConfig::make(attacks::attack_kind_from_string(kind), epsilon);
        if (steps > 0) cfg.steps = steps;
        cfg.decay = decay;
        cfg.kappa = kappa;
        return attacks::run_attack(surrogate, images, labels, cfg, seed).perturbed;
      },
      py::arg("surrogate"), py::arg("images"), py::arg("labels"), py::arg("kind") = "fgsm",
      py::arg("epsilon") = 0.1, py::arg("steps") = 0, py::arg("decay") = 1.0,
      py::arg("kappa") = 50.0, py::arg("seed") = 0);

  m.def(
      "cosine_similarity",
      [](const std::vector<double>& u, const std::vector<double>& v) {
        return diversity::cosine_similarity(Tensor({static_cast<std::int64_t>(u.size())}, u),
                                            Tensor({static_cast<std::int64_t>(v.size())}, v));
      },
      py::arg("u"), py::arg("v"));
  m.def(
      "coherence",
      [](const std::vector<std::vector<double>>& vectors) {
        return diversity::coherence(gradset_from(vectors));
      },
      py::arg("vectors"), "max pairwise cosine similarity");
  m.def(
      "gal",
      [](const std::vector<std::vector<double>>& vectors) {
        return diversity::gal(gradset_from(vectors))->value.item();
      },
      py::arg("vectors"), "log-sum-exp of pairwise cosine similarities");

  m.def(
      "regular_hadamard",
      [](std::int64_t order) {
        gaas::HadamardMatrix h = gaas::regular_hadamard(order);
        std::vector<std::vector<int>> rows(static_cast<std::size_t>(order));
        for (std::int64_t r = 0; r < order; ++r)
          rows[static_cast<std::size_t>(r)].assign(h.entries.begin() + r * order,
                                                   h.entries.begin() + (r + 1) * order);
        return rows;
      },
      py::arg("order"));

  m.def(
      "gaas_directions",
      [](const std::vector<double>& gradient, std::int64_t order, double epsilon) {
        Tensor g({static_cast<std::int64_t>(gradient.size())}, gradient);
        std::vector<std::vector<double>> out;
        for (const Tensor& t : gaas_directions(g, gaas::regular_hadamard(order), epsilon))
          out.push_back(t.vec());
        return out;
      },
      py::arg("gradient"), py::arg("order"), py::arg("epsilon"));
}
