#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divtrain/autodiff.hpp"
#include "divtrain/tensor.hpp"

namespace divtrain::nn {

enum class LayerKind { Conv, MaxPool, Fc, Output };

struct Layer {
  LayerKind kind;
  std::int64_t width = 0;  // Conv: out channels; Fc/Output: units
};

struct InputShape {
  std::int64_t channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t numel() const { return channels * height * width; }
  bool operator==(const InputShape&) const = default;
};

// Layer structure in the C<n>/M/FC<n> grammar. Conv layers are 3x3 stride-1
// same-padding, pooling is 2x2 stride-2, every Conv/FC is followed by a
// leaky-ReLU except the final Output layer.
struct ModelSpec {
  std::vector<Layer> layers;
  InputShape input;
  double alpha = 0.1;         // leaky-ReLU slope
  std::int64_t classes() const { return layers.back().width; }
  std::string to_string() const;
};

// "C32-C64-M-C128-M-FC1024-FC10". The last token must be FC<classes> and is
// parsed as the Output layer. RES<n> is recognized but reserved.
ModelSpec parse_spec(const std::string& text, InputShape input, double alpha = 0.1);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Trainable tensors in layer order: "layer<i>.weight", "layer<i>.bias".
struct Parameters {
  std::vector<NamedTensor> items;
  std::int64_t total_count() const;
};

// Expected (name, shape) sequence for a spec's trainable tensors.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> param_layout(const ModelSpec& spec);

// He fan-in initialization, biases zero; bit-identical for identical
// (spec, seed).
Parameters init_params(const ModelSpec& spec, std::uint64_t seed);

struct Model {
  ModelSpec spec;
  Parameters params;
};

struct Ensemble {
  std::vector<Model> members;
  std::size_t size() const { return members.size(); }
};

Ensemble make_ensemble(const std::vector<ModelSpec>& specs, const std::vector<std::uint64_t>& seeds);

// Forward pass over graph Vars; `params` must follow the Parameters layout.
ad::Var forward_logits(const ModelSpec& spec, const std::vector<ad::Var>& params,
                       const ad::Var& batch);
// Plain forward on tensors (no graph is retained).
Tensor forward_logits(const Model& model, const Tensor& batch);

std::vector<ad::Var> param_leaves(const Parameters& params, bool requires_grad);

// Row-wise stabilized softmax.
Tensor softmax_rows(const Tensor& logits);

// argmax of the mean of member softmax outputs; ties break to the lowest
// class index.
std::vector<std::int64_t> ensemble_predict(const Ensemble& ens, const Tensor& batch);

double accuracy(const Ensemble& ens, const Tensor& images, const std::vector<std::int64_t>& labels,
                std::int64_t batch_size = 256);

}  // namespace divtrain::nn
