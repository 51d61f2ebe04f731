#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rtcc/tensor/tensor.hpp"

// Central finite-difference checks of reverse-mode gradients. The numeric side
// only ever calls forward passes, so it stays independent of backward code.
namespace rtcc::gradcheck {

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Elements whose absolute error is at most this pass regardless of their
  // relative error. Gradient components near the round-off floor of the
  // central difference (about 1e-16 * |f| / step) cannot be resolved
  // relatively.
  double abs_tolerance = 0.0;
  // Elements checked per input; larger inputs are sampled deterministically.
  std::size_t max_elements = std::numeric_limits<std::size_t>::max();
  // Also compare one random unit-direction derivative per input.
  bool directional = false;
  std::uint64_t seed = 7;
};

struct Result {
  std::string name;
  bool passed = true;
  double max_rel_error = 0.0;  // over elements not rescued by abs_tolerance
  double max_abs_error = 0.0;  // over every element
  std::size_t checked = 0;
  std::size_t within_abs_tolerance = 0;  // failed relatively, passed by the absolute bound
  std::string worst;  // location of the worst element, for reporting
};

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double analytic, double numeric);

// Inputs must be defined f64 leaves. They require grad during the check and
// get their previous flag and an empty grad back afterwards.
Result check(const std::string& name, const ScalarFn& fn, std::vector<Tensor> inputs, const Options& options = {});

// sum(x * r) for a fixed pseudo-random r, turning any op output into a scalar
// whose gradient exercises every output element differently.
Tensor random_projection(const Tensor& x, std::uint64_t seed);

Tensor random_tensor(const Dims& dims, std::uint64_t seed, DType dtype = DType::f64, double scale = 1.0);

// Every differentiable op of the tensor layer in 64-bit mode.
std::vector<Result> op_suite(const Options& options = {});

}  // namespace rtcc::gradcheck
