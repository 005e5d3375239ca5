#pragma once

// Raw dense kernels behind the autodiff primitives. All accumulation orders
// are fixed per output element, so results are bit-identical for any thread
// count.

#include <cstdint>
#include <vector>

#include "divtrain/tensor.hpp"

namespace divtrain::ad::kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// NCHW, stride 1, zero padding (k-1)/2 so spatial dims are preserved.
Tensor conv2d(const Tensor& x, const Tensor& w);
Tensor conv2d_grad_input(const Tensor& g, const Tensor& w);
Tensor conv2d_grad_weight(const Tensor& g, const Tensor& x, std::int64_t kernel);

// 2x2 stride-2 max pooling; ties resolve to the first element in row-major
// window order. argmax_flat receives one flat input index per output element.
Tensor maxpool2x2(const Tensor& x, std::vector<std::int64_t>& argmax_flat);
Tensor max_unpool(const Tensor& pooled, const std::vector<std::int64_t>& argmax_flat,
                  const std::vector<std::int64_t>& input_shape);
Tensor take_flat(const Tensor& src, const std::vector<std::int64_t>& argmax_flat,
                 const std::vector<std::int64_t>& out_shape);

Tensor log_softmax_nll(const Tensor& logits, const std::vector<std::int64_t>& labels);

}  // namespace divtrain::ad::kernels
