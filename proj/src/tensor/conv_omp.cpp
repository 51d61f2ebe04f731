#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "rtcc/tensor/kernels.hpp"

namespace rtcc::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::omp};

// Output indices o in [lo, hi) whose input position o*stride + offset lies
// inside [0, extent).
struct Range {
  std::int64_t lo, hi;
};

Range valid_range(std::int64_t out_extent, std::int64_t in_extent, std::int64_t stride,
                  std::int64_t offset) {
  std::int64_t lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  const std::int64_t last = in_extent - 1 - offset;
  if (last < 0) return {0, 0};
  const std::int64_t hi = std::min(out_extent, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

inline std::size_t idx(std::int64_t v) { return static_cast<std::size_t>(v); }

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

namespace omp {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  const std::int64_t icg = g.in_per_group();
  const std::int64_t ocg = g.out_per_group();
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t out_plane = g.out_h * g.out_w;
  const bool pointwise = g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
  const std::int64_t planes = g.batch * g.out_channels;

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::int64_t n = p / g.out_channels;
    const std::int64_t oc = p % g.out_channels;
    const std::int64_t group = oc / ocg;
    T* out = output.data() + p * out_plane;
    std::fill(out, out + out_plane, T(0));
    for (std::int64_t c = 0; c < icg; ++c) {
      const T* in = input.data() + (n * g.in_channels + group * icg + c) * in_plane;
      const T* wk = weight.data() + (oc * icg + c) * g.kernel_h * g.kernel_w;
      if (pointwise) {
        const T w = wk[0];
#pragma omp simd
        for (std::int64_t i = 0; i < out_plane; ++i) out[i] += w * in[i];
        continue;
      }
      for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
        const std::int64_t off_h = kh * g.dilation - g.padding;
        const Range rh = valid_range(g.out_h, g.in_h, g.stride, off_h);
        for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
          const std::int64_t off_w = kw * g.dilation - g.padding;
          const Range rw = valid_range(g.out_w, g.in_w, g.stride, off_w);
          const T w = wk[kh * g.kernel_w + kw];
          for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
            T* orow = out + oh * g.out_w;
            const T* irow = in + (oh * g.stride + off_h) * g.in_w + off_w;
            if (g.stride == 1) {
#pragma omp simd
              for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) orow[ow] += w * irow[ow];
            } else {
              const std::int64_t s = g.stride;
              for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) orow[ow] += w * irow[ow * s];
            }
          }
        }
      }
    }
    if (!bias.empty()) {
      const T b = bias[idx(oc)];
      for (std::int64_t i = 0; i < out_plane; ++i) out[i] += b;
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
  const std::int64_t icg = g.in_per_group();
  const std::int64_t ocg = g.out_per_group();
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t out_plane = g.out_h * g.out_w;
  const bool pointwise = g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
  const std::int64_t planes = g.batch * g.in_channels;

#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::int64_t n = p / g.in_channels;
    const std::int64_t ic = p % g.in_channels;
    const std::int64_t group = ic / icg;
    const std::int64_t c = ic % icg;
    T* gin = grad_in.data() + p * in_plane;
    std::fill(gin, gin + in_plane, T(0));
    for (std::int64_t o = 0; o < ocg; ++o) {
      const std::int64_t oc = group * ocg + o;
      const T* go = grad_out.data() + (n * g.out_channels + oc) * out_plane;
      const T* wk = weight.data() + (oc * icg + c) * g.kernel_h * g.kernel_w;
      if (pointwise) {
        const T w = wk[0];
#pragma omp simd
        for (std::int64_t i = 0; i < in_plane; ++i) gin[i] += w * go[i];
        continue;
      }
      for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
        const std::int64_t off_h = kh * g.dilation - g.padding;
        const Range rh = valid_range(g.out_h, g.in_h, g.stride, off_h);
        for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
          const std::int64_t off_w = kw * g.dilation - g.padding;
          const Range rw = valid_range(g.out_w, g.in_w, g.stride, off_w);
          const T w = wk[kh * g.kernel_w + kw];
          for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
            const T* grow = go + oh * g.out_w;
            T* irow = gin + (oh * g.stride + off_h) * g.in_w + off_w;
            if (g.stride == 1) {
#pragma omp simd
              for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) irow[ow] += w * grow[ow];
            } else {
              const std::int64_t s = g.stride;
              for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) irow[ow * s] += w * grow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out,
                            std::span<const T> input, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
  const std::int64_t icg = g.in_per_group();
  const std::int64_t ocg = g.out_per_group();
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t out_plane = g.out_h * g.out_w;
  const bool pointwise = g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;

#pragma omp parallel for schedule(dynamic)
  for (std::int64_t oc = 0; oc < g.out_channels; ++oc) {
    const std::int64_t group = oc / ocg;
    for (std::int64_t c = 0; c < icg; ++c) {
      const std::int64_t ic = group * icg + c;
      T* gw = grad_weight.data() + (oc * icg + c) * g.kernel_h * g.kernel_w;
      for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
        const std::int64_t off_h = kh * g.dilation - g.padding;
        const Range rh = valid_range(g.out_h, g.in_h, g.stride, off_h);
        for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
          const std::int64_t off_w = kw * g.dilation - g.padding;
          const Range rw = valid_range(g.out_w, g.in_w, g.stride, off_w);
          T acc = 0;
          for (std::int64_t n = 0; n < g.batch; ++n) {
            const T* go = grad_out.data() + (n * g.out_channels + oc) * out_plane;
            const T* in = input.data() + (n * g.in_channels + ic) * in_plane;
            if (pointwise) {
#pragma omp simd reduction(+ : acc)
              for (std::int64_t i = 0; i < out_plane; ++i) acc += go[i] * in[i];
              continue;
            }
            for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
              const T* grow = go + oh * g.out_w;
              const T* irow = in + (oh * g.stride + off_h) * g.in_w + off_w;
              const std::int64_t s = g.stride;
              if (s == 1) {
#pragma omp simd reduction(+ : acc)
                for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) acc += grow[ow] * irow[ow];
              } else {
#pragma omp simd reduction(+ : acc)
                for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) acc += grow[ow] * irow[ow * s];
              }
            }
          }
          gw[kh * g.kernel_w + kw] = acc;
        }
      }
    }
    if (!grad_bias.empty()) {
      T acc = 0;
      for (std::int64_t n = 0; n < g.batch; ++n) {
        const T* go = grad_out.data() + (n * g.out_channels + oc) * out_plane;
#pragma omp simd reduction(+ : acc)
        for (std::int64_t i = 0; i < out_plane; ++i) acc += go[i];
      }
      grad_bias[idx(oc)] = acc;
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

}  // namespace omp
}  // namespace rtcc::kernels
