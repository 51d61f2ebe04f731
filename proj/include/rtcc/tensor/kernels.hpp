#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "rtcc/tensor/tensor.hpp"

namespace rtcc {

struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
  bool has_bias = true;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  Dims weight_dims() const { return {out_channels, in_channels / groups, kernel_h, kernel_w}; }
  bool is_depthwise() const { return groups == in_channels && groups == out_channels; }
  std::int64_t param_count() const;
  std::string describe() const;
};

// floor((in + 2*padding - dilation*(kernel-1) - 1) / stride) + 1, may be < 1.
std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t padding, std::int64_t dilation);

namespace kernels {

struct ConvGeometry {
  std::int64_t batch, in_channels, in_h, in_w;
  std::int64_t out_channels, out_h, out_w;
  std::int64_t kernel_h, kernel_w, stride, padding, dilation, groups;

  static ConvGeometry make(const Dims& input_dims, const ConvSpec& spec);
  std::int64_t in_per_group() const { return in_channels / groups; }
  std::int64_t out_per_group() const { return out_channels / groups; }
  // Multiply-accumulates of one forward pass, bias excluded.
  std::int64_t macs() const {
    return batch * out_h * out_w * out_channels * kernel_h * kernel_w * in_per_group();
  }
};

enum class Backend { reference, omp };

// Process-wide selection used by the ops layer. Defaults to omp.
void set_backend(Backend backend);
Backend backend();

class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

// Serial kernels written one output element at a time. They are the oracle
// the parallel kernels are tested against and are never used for speed.
namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in);
// grad_bias may be empty.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_weight,
                            std::span<T> grad_bias);

}  // namespace reference

// OpenMP kernels. Work is partitioned by output ownership (one thread per
// output plane or filter), so results do not depend on the thread count.
// conv2d_forward and conv2d_backward_input accumulate in the same order as
// the reference and match it bit for bit; conv2d_backward_weight vectorizes
// its reductions and matches to rounding.
namespace omp {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_weight,
                            std::span<T> grad_bias);

int max_threads();
void set_threads(int n);

}  // namespace omp

}  // namespace kernels
}  // namespace rtcc
