#include "divtrain/model.hpp"

#include <algorithm>
#include <cmath>

#include "divtrain/rng.hpp"

namespace divtrain::nn {

namespace {

constexpr std::int64_t kConvKernel = 3;

struct ShapeCursor {
  std::int64_t c, h, w;
  bool flat = false;  // true once an FC layer has been seen
};

// Propagates shapes through the spec, throwing on underflow. Returns the
// flattened feature count entering each FC layer.
void validate_shapes(const ModelSpec& spec) {
  ShapeCursor cur{spec.input.channels, spec.input.height, spec.input.width};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        if (cur.flat)
          throw ParseError("conv layer after a fully connected layer", i);
        cur.c = l.width;
        break;
      case LayerKind::MaxPool:
        if (cur.flat) throw ParseError("pooling after a fully connected layer", i);
        if (cur.h < 2 || cur.w < 2)
          throw ParseError("pooling would shrink a dimension below 1", i);
        if (cur.h % 2 != 0 || cur.w % 2 != 0)
          throw ParseError("pooling requires even spatial dims, got " + std::to_string(cur.h) +
                               "x" + std::to_string(cur.w),
                           i);
        cur.h /= 2;
        cur.w /= 2;
        break;
      case LayerKind::Fc:
      case LayerKind::Output:
        cur.flat = true;
        cur.c = l.width;
        cur.h = cur.w = 1;
        break;
    }
  }
}

}  // namespace

std::string ModelSpec::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += "-";
    const Layer& l = layers[i];
    switch (l.kind) {
      case LayerKind::Conv: out += "C" + std::to_string(l.width); break;
      case LayerKind::MaxPool: out += "M"; break;
      case LayerKind::Fc:
      case LayerKind::Output: out += "FC" + std::to_string(l.width); break;
    }
  }
  return out;
}

ModelSpec parse_spec(const std::string& text, InputShape input, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValueError("parse_spec: activation slope must be in (0,1)");
  ModelSpec spec;
  spec.input = input;
  spec.alpha = alpha;

  std::size_t pos = 0;
  std::size_t token_index = 0;
  while (pos < text.size()) {
    std::size_t dash = text.find('-', pos);
    std::string tok = text.substr(pos, dash == std::string::npos ? std::string::npos : dash - pos);
    if (tok.empty()) throw ParseError("empty token", pos);

    auto number_after = [&](std::size_t prefix_len) {
      std::string digits = tok.substr(prefix_len);
      if (digits.empty() || !std::all_of(digits.begin(), digits.end(),
                                         [](unsigned char ch) { return std::isdigit(ch); }))
        throw ParseError("expected a width after '" + tok.substr(0, prefix_len) + "' in token '" +
                             tok + "'",
                         pos);
      std::int64_t n = std::stoll(digits);
      if (n <= 0) throw ParseError("layer width must be positive in token '" + tok + "'", pos);
      return n;
    };

    if (tok == "M") {
      spec.layers.push_back({LayerKind::MaxPool, 0});
    } else if (tok.rfind("RES", 0) == 0) {
      throw ParseError("RES layers are reserved and not supported in token '" + tok + "'", pos);
    } else if (tok.rfind("FC", 0) == 0) {
      spec.layers.push_back({LayerKind::Fc, number_after(2)});
    } else if (tok[0] == 'C') {
      spec.layers.push_back({LayerKind::Conv, number_after(1)});
    } else {
      throw ParseError("unknown token '" + tok + "'", pos);
    }
    ++token_index;
    if (dash == std::string::npos) break;
    pos = dash + 1;
  }

  if (spec.layers.empty()) throw ParseError("empty model spec", 0);
  if (spec.layers.back().kind != LayerKind::Fc)
    throw ParseError("spec must end with an FC<classes> output layer", text.size());
  spec.layers.back().kind = LayerKind::Output;
  validate_shapes(spec);
  return spec;
}

std::int64_t Parameters::total_count() const {
  std::int64_t n = 0;
  for (const auto& item : items) n += item.tensor.numel();
  return n;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> param_layout(
    const ModelSpec& spec) {
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> layout;
  std::int64_t c = spec.input.channels, h = spec.input.height, w = spec.input.width;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    const std::string base = "layer" + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Conv:
        layout.emplace_back(base + ".weight",
                            std::vector<std::int64_t>{l.width, c, kConvKernel, kConvKernel});
        layout.emplace_back(base + ".bias", std::vector<std::int64_t>{l.width});
        c = l.width;
        break;
      case LayerKind::MaxPool:
        h /= 2;
        w /= 2;
        break;
      case LayerKind::Fc:
      case LayerKind::Output:
        layout.emplace_back(base + ".weight", std::vector<std::int64_t>{c * h * w, l.width});
        layout.emplace_back(base + ".bias", std::vector<std::int64_t>{l.width});
        c = l.width;
        h = w = 1;
        break;
    }
  }
  return layout;
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Parameters params;
  for (const auto& [name, shape] : param_layout(spec)) {
    Tensor t(shape);
    if (name.ends_with(".weight")) {
      // fan-in is the product of all dims except the output one; conv weights
      // are [out,in,k,k], fc weights are [in,out].
      const std::int64_t fan_in =
          shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::int64_t j = 0; j < t.numel(); ++j) t[j] = rng.normal(0.0, std);
    }
    params.items.push_back({name, std::move(t)});
  }
  return params;
}

Ensemble make_ensemble(const std::vector<ModelSpec>& specs,
                       const std::vector<std::uint64_t>& seeds) {
  if (specs.size() != seeds.size())
    throw ValueError("make_ensemble: spec count does not match seed count");
  Ensemble ens;
  for (std::size_t i = 0; i < specs.size(); ++i)
    ens.members.push_back({specs[i], init_params(specs[i], seeds[i])});
  return ens;
}

ad::Var forward_logits(const ModelSpec& spec, const std::vector<ad::Var>& params,
                       const ad::Var& batch) {
  const auto& bshape = batch->value.shape();
  if (bshape.size() != 4 || bshape[1] != spec.input.channels ||
      bshape[2] != spec.input.height || bshape[3] != spec.input.width)
    throw ShapeError("forward_logits: batch " + batch->value.shape_str() +
                     " does not match model input [B," + std::to_string(spec.input.channels) +
                     "," + std::to_string(spec.input.height) + "," +
                     std::to_string(spec.input.width) + "]");
  const std::int64_t bsz = bshape[0];

  ad::Var x = batch;
  std::size_t p = 0;
  auto next_param = [&]() -> const ad::Var& {
    if (p >= params.size()) throw ShapeError("forward_logits: too few parameter tensors");
    return params[p++];
  };

  bool flat = false;
  for (const Layer& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv: {
        const ad::Var& weight = next_param();
        const ad::Var& bias = next_param();
        x = ad::leaky_relu(ad::bias_add(ad::conv2d(x, weight), bias), spec.alpha);
        break;
      }
      case LayerKind::MaxPool:
        x = ad::maxpool2x2(x);
        break;
      case LayerKind::Fc:
      case LayerKind::Output: {
        if (!flat) {
          x = ad::reshape(x, {bsz, x->value.numel() / bsz});
          flat = true;
        }
        const ad::Var& weight = next_param();
        const ad::Var& bias = next_param();
        x = ad::bias_add(ad::matmul(x, weight), bias);
        if (l.kind == LayerKind::Fc) x = ad::leaky_relu(x, spec.alpha);
        break;
      }
    }
  }
  if (p != params.size()) throw ShapeError("forward_logits: too many parameter tensors");
  return x;
}

Tensor forward_logits(const Model& model, const Tensor& batch) {
  ad::NoGradGuard guard;
  return forward_logits(model.spec, param_leaves(model.params, false), ad::constant(batch))->value;
}

std::vector<ad::Var> param_leaves(const Parameters& params, bool requires_grad) {
  std::vector<ad::Var> leaves;
  leaves.reserve(params.items.size());
  for (const auto& item : params.items) leaves.push_back(ad::leaf(item.tensor, requires_grad));
  return leaves;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: logits must be [B,C]");
  const std::int64_t bsz = logits.dim(0), c = logits.dim(1);
  Tensor out({bsz, c});
  for (std::int64_t b = 0; b < bsz; ++b) {
    const double* row = logits.data() + b * c;
    double m = row[0];
    for (std::int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      out[b * c + j] = std::exp(row[j] - m);
      sum += out[b * c + j];
    }
    for (std::int64_t j = 0; j < c; ++j) out[b * c + j] /= sum;
  }
  return out;
}

std::vector<std::int64_t> ensemble_predict(const Ensemble& ens, const Tensor& batch) {
  if (ens.members.empty()) throw ValueError("ensemble_predict: empty ensemble");
  const std::int64_t bsz = batch.dim(0);
  const std::int64_t classes = ens.members.front().spec.classes();
  Tensor mean({bsz, classes});
  for (const Model& m : ens.members) {
    Tensor probs = softmax_rows(forward_logits(m, batch));
    for (std::int64_t i = 0; i < mean.numel(); ++i) mean[i] += probs[i];
  }
  std::vector<std::int64_t> pred(static_cast<std::size_t>(bsz));
  for (std::int64_t b = 0; b < bsz; ++b) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < classes; ++j)
      if (mean[b * classes + j] > mean[b * classes + best]) best = j;
    pred[static_cast<std::size_t>(b)] = best;
  }
  return pred;
}

double accuracy(const Ensemble& ens, const Tensor& images, const std::vector<std::int64_t>& labels,
                std::int64_t batch_size) {
  const std::int64_t n = images.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeError("accuracy: label count does not match image count");
  const std::int64_t per = images.numel() / n;
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t count = std::min(batch_size, n - start);
    std::vector<std::int64_t> shape = images.shape();
    shape[0] = count;
    Tensor batch(shape, std::vector<double>(images.data() + start * per,
                                            images.data() + (start + count) * per));
    std::vector<std::int64_t> pred = ensemble_predict(ens, batch);
    for (std::int64_t i = 0; i < count; ++i)
      if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(start + i)]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace divtrain::nn
