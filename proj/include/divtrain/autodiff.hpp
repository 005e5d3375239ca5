#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "divtrain/tensor.hpp"

namespace divtrain::ad {

// Primitive set. Every backward rule is expressed in terms of these same
// primitives, so gradients produced with create_graph are ordinary graphs
// that can be differentiated again (reverse-over-reverse).
enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Scale,        // x * c
  Matmul,       // [m,k] x [k,n]
  Transpose,    // 2-D
  Conv2d,       // NCHW, stride 1, zero "same" padding, odd square kernel
  ConvGradIn,   // adjoint of conv2d w.r.t. its input
  ConvGradW,    // adjoint of conv2d w.r.t. its weight
  MaxPool,      // 2x2 window, stride 2
  MaxUnpool,    // scatter pooled values at recorded argmax positions
  TakeFlat,     // gather at recorded argmax positions
  LeakyRelu,
  BiasExpand,   // [C] -> [B,C] or [B,C,H,W]
  BiasSum,      // reverse of BiasExpand
  Reshape,
  ReduceSum,    // all elements -> [1]
  ReduceMean,   // all elements -> [1]
  RowSum,       // [B,d] -> [B]
  ExpandScalar, // [1] -> shape
  ExpandCols,   // [B] -> [B,d]
  Square,
  Sqrt,
  Exp,
  Log,
  ClampMin,
  Clamp,
  LogSoftmaxNll,  // fused, numerically stabilized mean NLL
};

const char* op_name(Op op);

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Op op = Op::Leaf;
  bool requires_grad = false;
  std::vector<Var> inputs;  // empty for leaves and for nodes built with grad disabled

  // per-op attributes
  double c0 = 0.0;                     // Scale factor / LeakyRelu slope / Clamp lo / ClampMin bound
  double c1 = 0.0;                     // Clamp hi
  std::int64_t kernel = 0;             // ConvGradW kernel size
  std::vector<std::int64_t> arg_shape; // Reshape/ExpandScalar/BiasExpand/MaxUnpool target shape,
                                       // ExpandCols column count (single entry)
  std::shared_ptr<const std::vector<std::int64_t>> indices;  // MaxPool argmax (flat input index per output element)
  std::shared_ptr<const std::vector<std::int64_t>> labels;   // LogSoftmaxNll class indices
};

// Thread-local switch: when disabled, newly built nodes record no parents and
// never require grad (graphs stay light inside plain evaluations).
bool grad_enabled();

class GradMode {
 public:
  explicit GradMode(bool enabled);
  ~GradMode();
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool prev_;
};

struct NoGradGuard : GradMode {
  NoGradGuard() : GradMode(false) {}
};

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);
Var conv2d(const Var& x, const Var& w);
Var maxpool2x2(const Var& x);
Var leaky_relu(const Var& x, double alpha);
Var bias_add(const Var& x, const Var& b);  // composite: add(x, bias_expand(b))
Var bias_expand(const Var& b, const std::vector<std::int64_t>& shape);
Var bias_sum(const Var& x);
Var reshape(const Var& x, const std::vector<std::int64_t>& shape);
Var reduce_sum(const Var& x);
Var reduce_mean(const Var& x);
Var row_sum(const Var& x);
Var expand_scalar(const Var& x, const std::vector<std::int64_t>& shape);
Var expand_cols(const Var& x, std::int64_t cols);
Var square(const Var& x);
Var sqrt(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var clamp_min(const Var& x, double lo);
Var clamp(const Var& x, double lo, double hi);
Var dot(const Var& a, const Var& b);  // composite: reduce_sum(mul(a,b))
Var log_softmax_nll(const Var& logits, const std::vector<std::int64_t>& labels);

// Re-applies a node's primitive to its recorded input values. Used by tests
// to check graph integrity; leaves return their stored value.
Tensor recompute(const Var& v);

struct GradRequest {
  Var output;                 // scalar ([1])
  std::vector<Var> wrt;
  bool create_graph = false;  // keep the returned gradients differentiable
};

// Reverse-mode gradient of a scalar. Unreachable wrt entries yield zero
// tensors. With create_graph the results are graphs over the same primitive
// set and can be differentiated again.
std::vector<Var> grad(const GradRequest& req);
std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, bool create_graph = false);

// Central-difference check of grad() against f evaluated at perturbed points.
// Returns max over elements of |ad - fd| / max(|ad|, |fd|, 1e-8).
double finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& point, double h);

}  // namespace divtrain::ad
