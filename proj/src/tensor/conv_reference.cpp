#include <sstream>

#include "rtcc/error.hpp"
#include "rtcc/tensor/kernels.hpp"

namespace rtcc {

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t padding, std::int64_t dilation) {
  const std::int64_t span = in + 2 * padding - dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

void ConvSpec::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("conv ") + name + " must be positive, got " + std::to_string(v));
  };
  positive(in_channels, "in_channels");
  positive(out_channels, "out_channels");
  positive(kernel_h, "kernel_h");
  positive(kernel_w, "kernel_w");
  positive(stride, "stride");
  positive(dilation, "dilation");
  positive(groups, "groups");
  if (padding < 0) throw ConfigError("conv padding must be non-negative, got " + std::to_string(padding));
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv channels not divisible by groups: " + describe());
  }
}

std::int64_t ConvSpec::param_count() const {
  return out_channels * (in_channels / groups) * kernel_h * kernel_w + (has_bias ? out_channels : 0);
}

std::string ConvSpec::describe() const {
  std::ostringstream os;
  os << "conv " << in_channels << "->" << out_channels << " k" << kernel_h << 'x' << kernel_w << " s"
     << stride << " p" << padding << " d" << dilation << " g" << groups;
  return os.str();
}

namespace kernels {

ConvGeometry ConvGeometry::make(const Dims& input_dims, const ConvSpec& spec) {
  spec.validate();
  if (input_dims.size() != 4) {
    throw ShapeError("conv2d expects input dims (N,C,H,W), got " + to_string(input_dims));
  }
  if (input_dims[1] != spec.in_channels) {
    throw ConfigError("conv2d input channels " + std::to_string(input_dims[1]) + " do not match " +
                     spec.describe());
  }
  ConvGeometry g{};
  g.batch = input_dims[0];
  g.in_channels = input_dims[1];
  g.in_h = input_dims[2];
  g.in_w = input_dims[3];
  g.out_channels = spec.out_channels;
  g.kernel_h = spec.kernel_h;
  g.kernel_w = spec.kernel_w;
  g.stride = spec.stride;
  g.padding = spec.padding;
  g.dilation = spec.dilation;
  g.groups = spec.groups;
  g.out_h = conv_output_size(g.in_h, g.kernel_h, g.stride, g.padding, g.dilation);
  g.out_w = conv_output_size(g.in_w, g.kernel_w, g.stride, g.padding, g.dilation);
  if (g.out_h < 1 || g.out_w < 1) {
    throw ConfigError("conv2d output size " + std::to_string(g.out_h) + "x" + std::to_string(g.out_w) +
                      " < 1 for input " + to_string(input_dims) + " with " + spec.describe());
  }
  return g;
}

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  const auto icg = g.in_per_group();
  const auto ocg = g.out_per_group();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t oc = 0; oc < g.out_channels; ++oc) {
      const std::int64_t group = oc / ocg;
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          T acc = 0;
          for (std::int64_t c = 0; c < icg; ++c) {
            const std::int64_t ic = group * icg + c;
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
              const std::int64_t ih = oh * g.stride + kh * g.dilation - g.padding;
              if (ih < 0 || ih >= g.in_h) continue;
              for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::int64_t iw = ow * g.stride + kw * g.dilation - g.padding;
                if (iw < 0 || iw >= g.in_w) continue;
                const T x = input[static_cast<std::size_t>(((n * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw)];
                const T w = weight[static_cast<std::size_t>(((oc * icg + c) * g.kernel_h + kh) * g.kernel_w + kw)];
                acc += w * x;
              }
            }
          }
          if (!bias.empty()) acc += bias[static_cast<std::size_t>(oc)];
          output[static_cast<std::size_t>(((n * g.out_channels + oc) * g.out_h + oh) * g.out_w + ow)] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
  const auto icg = g.in_per_group();
  const auto ocg = g.out_per_group();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t ic = 0; ic < g.in_channels; ++ic) {
      const std::int64_t group = ic / icg;
      const std::int64_t c = ic % icg;
      for (std::int64_t ih = 0; ih < g.in_h; ++ih) {
        for (std::int64_t iw = 0; iw < g.in_w; ++iw) {
          T acc = 0;
          for (std::int64_t o = 0; o < ocg; ++o) {
            const std::int64_t oc = group * ocg + o;
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
              const std::int64_t th = ih + g.padding - kh * g.dilation;
              if (th < 0 || th % g.stride != 0) continue;
              const std::int64_t oh = th / g.stride;
              if (oh >= g.out_h) continue;
              for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::int64_t tw = iw + g.padding - kw * g.dilation;
                if (tw < 0 || tw % g.stride != 0) continue;
                const std::int64_t ow = tw / g.stride;
                if (ow >= g.out_w) continue;
                const T go = grad_out[static_cast<std::size_t>(((n * g.out_channels + oc) * g.out_h + oh) * g.out_w + ow)];
                const T w = weight[static_cast<std::size_t>(((oc * icg + c) * g.kernel_h + kh) * g.kernel_w + kw)];
                acc += w * go;
              }
            }
          }
          grad_in[static_cast<std::size_t>(((n * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw)] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
  const auto icg = g.in_per_group();
  const auto ocg = g.out_per_group();
  for (std::int64_t oc = 0; oc < g.out_channels; ++oc) {
    const std::int64_t group = oc / ocg;
    for (std::int64_t c = 0; c < icg; ++c) {
      const std::int64_t ic = group * icg + c;
      for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
        for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
          T acc = 0;
          for (std::int64_t n = 0; n < g.batch; ++n) {
            for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
              const std::int64_t ih = oh * g.stride + kh * g.dilation - g.padding;
              if (ih < 0 || ih >= g.in_h) continue;
              for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                const std::int64_t iw = ow * g.stride + kw * g.dilation - g.padding;
                if (iw < 0 || iw >= g.in_w) continue;
                acc += grad_out[static_cast<std::size_t>(((n * g.out_channels + oc) * g.out_h + oh) * g.out_w + ow)] *
                       input[static_cast<std::size_t>(((n * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw)];
              }
            }
          }
          grad_weight[static_cast<std::size_t>(((oc * icg + c) * g.kernel_h + kh) * g.kernel_w + kw)] = acc;
        }
      }
    }
    if (!grad_bias.empty()) {
      T acc = 0;
      for (std::int64_t n = 0; n < g.batch; ++n) {
        for (std::int64_t i = 0; i < g.out_h * g.out_w; ++i) {
          acc += grad_out[static_cast<std::size_t>((n * g.out_channels + oc) * g.out_h * g.out_w + i)];
        }
      }
      grad_bias[static_cast<std::size_t>(oc)] = acc;
    }
  }
}

#define RTCC_INSTANTIATE(T)                                                                          \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,       \
                                  std::span<const T>, std::span<T>);                                  \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                         std::span<T>);                                               \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                          std::span<T>, std::span<T>);
RTCC_INSTANTIATE(float)
RTCC_INSTANTIATE(double)
#undef RTCC_INSTANTIATE

}  // namespace reference
}  // namespace kernels
}  // namespace rtcc
