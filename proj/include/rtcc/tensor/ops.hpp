#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rtcc/tensor/kernels.hpp"
#include "rtcc/tensor/tensor.hpp"

// Differentiable operations on NCHW tensors. Every op accepts meta tensors
// (shape-only) and reports its multiply-accumulate count to trace::emit.
namespace rtcc::ops {

// Cross-correlation. `bias` may be undefined when spec.has_bias is false.
Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
              const Tensor& bias = {});

enum class Binary { add, mul };

// b has the same dims as a, or dims (N,C,1,1) broadcast over a's (N,C,H,W).
Tensor elementwise(const Tensor& a, const Tensor& b, Binary kind);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Binary::add); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Binary::mul); }

enum class Activation { relu, sigmoid };

Tensor activation(const Tensor& x, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }

// x * factor for a fixed constant.
Tensor scale(const Tensor& x, double factor);

Tensor global_avg_pool(const Tensor& x);
// Averages disjoint equal tiles; H and W must be multiples of out_h and out_w.
Tensor adaptive_avg_pool(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

Tensor upsample_nearest(const Tensor& x, std::int64_t factor);

// Channels [begin, begin+count).
Tensor channel_slice(const Tensor& x, std::int64_t begin, std::int64_t count);
std::pair<Tensor, Tensor> channel_split(const Tensor& x);
Tensor channel_concat(std::span<const Tensor> parts);
// View channels as (groups, C/groups), transpose, flatten.
Tensor channel_shuffle(const Tensor& x, std::int64_t groups);

// Sum of every element, rank-0 result.
Tensor sum(const Tensor& x);

// Stacks same-dims tensors along a new leading axis. Not differentiable.
Tensor stack(std::span<const Tensor> items);

}  // namespace rtcc::ops
