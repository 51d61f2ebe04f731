#include "rtcc/tensor/ops.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>

#include "rtcc/error.hpp"
#include "rtcc/tensor/trace.hpp"

namespace rtcc {

namespace trace {

namespace {
thread_local Recorder* t_recorder = nullptr;
thread_local std::string t_scope;
}  // namespace

ScopedRecorder::ScopedRecorder(Recorder& recorder) : previous_(t_recorder) { t_recorder = &recorder; }
ScopedRecorder::~ScopedRecorder() { t_recorder = previous_; }

NameScope::NameScope(std::string_view name, bool absolute) : previous_(t_scope) {
  if (absolute) t_scope.clear();
  if (!t_scope.empty()) t_scope += '.';
  t_scope += name;
}
NameScope::~NameScope() { t_scope = std::move(previous_); }

const std::string& current_scope() { return t_scope; }
bool active() { return t_recorder != nullptr; }

void emit(std::string_view op, const Dims& out_dims, std::int64_t macs, const ConvSpec* conv, const Dims& in_dims) {
  if (t_recorder) t_recorder->on_op(OpEvent{op, t_scope, out_dims, macs, conv, in_dims});
}

}  // namespace trace

namespace ops {

namespace {

inline std::size_t idx(std::int64_t v) { return static_cast<std::size_t>(v); }

void require_nchw(const Tensor& x, const char* op) {
  if (!x.defined()) throw UsageError(std::string(op) + ": undefined input");
  if (x.rank() != 4) throw ShapeError(std::string(op) + " expects (N,C,H,W), got " + to_string(x.dims()));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch " + to_string(a.dtype()) + " vs " + to_string(b.dtype()));
  }
}

bool any_meta(std::initializer_list<const Tensor*> ts) {
  for (const auto* t : ts) {
    if (t->defined() && t->is_meta()) return true;
  }
  return false;
}

#ifndef NDEBUG
bool all_finite(const Tensor& t) {
  if (!t.defined() || t.is_meta()) return true;
  return dispatch(t.dtype(), [&]<typename T>() {
    auto d = t.data<T>();
    return std::all_of(d.begin(), d.end(), [](T v) { return std::isfinite(v); });
  });
}
#endif

// Debug-only check that finite inputs produced finite outputs.
void check_finite(const Tensor& out, std::initializer_list<const Tensor*> inputs) {
#ifndef NDEBUG
  for (const auto* t : inputs) {
    if (!all_finite(*t)) return;
  }
  assert(all_finite(out) && "non-finite output from finite inputs");
#else
  (void)out;
  (void)inputs;
#endif
}

Tensor make_output(const Dims& dims, DType dtype, bool meta) {
  return meta ? Tensor::meta(dims, dtype) : Tensor::zeros(dims, dtype);
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight, const Tensor& bias) {
  require_nchw(input, "conv2d");
  const auto g = kernels::ConvGeometry::make(input.dims(), spec);
  if (!weight.defined() || weight.dims() != spec.weight_dims()) {
    throw ConfigError("conv2d weight dims " + (weight.defined() ? to_string(weight.dims()) : std::string("<none>")) +
                     " do not match expected " + to_string(spec.weight_dims()) + " for " + spec.describe());
  }
  require_same_dtype(input, weight, "conv2d");
  if (spec.has_bias) {
    if (!bias.defined() || bias.dims() != Dims{spec.out_channels}) {
      throw ConfigError("conv2d bias dims " + (bias.defined() ? to_string(bias.dims()) : std::string("<none>")) +
                       " do not match (" + std::to_string(spec.out_channels) + ")");
    }
    require_same_dtype(input, bias, "conv2d");
  } else if (bias.defined()) {
    throw ConfigError("conv2d bias given for a spec without bias: " + spec.describe());
  }

  const Dims out_dims{g.batch, g.out_channels, g.out_h, g.out_w};
  const bool meta = any_meta({&input, &weight, &bias});
  Tensor out = make_output(out_dims, input.dtype(), meta);
  trace::emit("conv2d", out_dims, g.macs(), &spec, input.dims());
  if (meta) return out;

  const bool use_ref = kernels::backend() == kernels::Backend::reference;
  dispatch(input.dtype(), [&]<typename T>() {
    std::span<const T> b = spec.has_bias ? bias.data<T>() : std::span<const T>{};
    if (use_ref) {
      kernels::reference::conv2d_forward<T>(g, input.data<T>(), weight.data<T>(), b, out.mutable_data<T>());
    } else {
      kernels::omp::conv2d_forward<T>(g, input.data<T>(), weight.data<T>(), b, out.mutable_data<T>());
    }
  });
  check_finite(out, {&input, &weight, &bias});

  std::vector<Tensor> inputs{input, weight};
  if (spec.has_bias) inputs.push_back(bias);
  const bool params_need_grad = weight.requires_grad() || (spec.has_bias && bias.requires_grad());
  autograd::record(out, std::move(inputs), [g, input, weight, params_need_grad, has_bias = spec.has_bias](const Tensor& grad_out) {
    std::vector<Tensor> grads(has_bias ? 3 : 2);
    const bool ref = kernels::backend() == kernels::Backend::reference;
    dispatch(grad_out.dtype(), [&]<typename T>() {
      if (input.requires_grad()) {
        Tensor gi = Tensor::zeros(input.dims(), input.dtype());
        if (ref) {
          kernels::reference::conv2d_backward_input<T>(g, grad_out.data<T>(), weight.data<T>(), gi.mutable_data<T>());
        } else {
          kernels::omp::conv2d_backward_input<T>(g, grad_out.data<T>(), weight.data<T>(), gi.mutable_data<T>());
        }
        grads[0] = gi;
      }
      if (!params_need_grad) return;
      Tensor gw = Tensor::zeros(weight.dims(), weight.dtype());
      Tensor gb = has_bias ? Tensor::zeros({g.out_channels}, weight.dtype()) : Tensor();
      std::span<T> gb_span = has_bias ? gb.mutable_data<T>() : std::span<T>{};
      if (ref) {
        kernels::reference::conv2d_backward_weight<T>(g, grad_out.data<T>(), input.data<T>(), gw.mutable_data<T>(), gb_span);
      } else {
        kernels::omp::conv2d_backward_weight<T>(g, grad_out.data<T>(), input.data<T>(), gw.mutable_data<T>(), gb_span);
      }
      grads[1] = gw;
      if (has_bias) grads[2] = gb;
    });
    return grads;
  });
  return out;
}

Tensor elementwise(const Tensor& a, const Tensor& b, Binary kind) {
  if (!a.defined() || !b.defined()) throw UsageError("elementwise: undefined operand");
  require_same_dtype(a, b, "elementwise");
  const bool same = a.dims() == b.dims();
  const bool broadcast = !same && a.rank() == 4 && b.rank() == 4 && b.dim(0) == a.dim(0) &&
                         b.dim(1) == a.dim(1) && b.dim(2) == 1 && b.dim(3) == 1;
  if (!same && !broadcast) {
    throw ShapeError("elementwise: dims " + to_string(b.dims()) + " do not broadcast against " + to_string(a.dims()));
  }
  const bool meta = any_meta({&a, &b});
  Tensor out = make_output(a.dims(), a.dtype(), meta);
  trace::emit(kind == Binary::add ? "add" : "mul", a.dims(), out.numel());
  if (meta) return out;

  // With broadcasting, b holds one value per (n, c) plane of `inner` elements.
  const std::int64_t inner = same ? 1 : a.dim(2) * a.dim(3);
  const std::int64_t total = a.numel();
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    if (same) {
      if (kind == Binary::add) {
#pragma omp parallel for simd schedule(static)
        for (std::int64_t i = 0; i < total; ++i) o[idx(i)] = x[idx(i)] + y[idx(i)];
      } else {
#pragma omp parallel for simd schedule(static)
        for (std::int64_t i = 0; i < total; ++i) o[idx(i)] = x[idx(i)] * y[idx(i)];
      }
    } else {
      const std::int64_t planes = total / inner;
#pragma omp parallel for schedule(static)
      for (std::int64_t p = 0; p < planes; ++p) {
        const T s = y[idx(p)];
        const T* xp = x.data() + p * inner;
        T* op = o.data() + p * inner;
        if (kind == Binary::add) {
          for (std::int64_t i = 0; i < inner; ++i) op[i] = xp[i] + s;
        } else {
          for (std::int64_t i = 0; i < inner; ++i) op[i] = xp[i] * s;
        }
      }
    }
  });
  check_finite(out, {&a, &b});

  autograd::record(out, {a, b}, [a, b, kind, same, inner](const Tensor& g) {
    std::vector<Tensor> grads(2);
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      const std::int64_t total = g.numel();
      if (a.requires_grad()) {
        if (kind == Binary::add) {
          grads[0] = g;
        } else {
          Tensor ga = Tensor::zeros(a.dims(), a.dtype());
          auto o = ga.mutable_data<T>();
          auto y = b.data<T>();
          for (std::int64_t i = 0; i < total; ++i) o[idx(i)] = gd[idx(i)] * y[idx(same ? i : i / inner)];
          grads[0] = ga;
        }
      }
      if (b.requires_grad()) {
        if (same) {
          if (kind == Binary::add) {
            grads[1] = g;
          } else {
            Tensor gb = Tensor::zeros(b.dims(), b.dtype());
            auto o = gb.mutable_data<T>();
            auto x = a.data<T>();
            for (std::int64_t i = 0; i < total; ++i) o[idx(i)] = gd[idx(i)] * x[idx(i)];
            grads[1] = gb;
          }
        } else {
          Tensor gb = Tensor::zeros(b.dims(), b.dtype());
          auto o = gb.mutable_data<T>();
          auto x = a.data<T>();
          const std::int64_t planes = total / inner;
          for (std::int64_t p = 0; p < planes; ++p) {
            T acc = 0;
            for (std::int64_t i = 0; i < inner; ++i) {
              const std::int64_t k = p * inner + i;
              acc += kind == Binary::add ? gd[idx(k)] : gd[idx(k)] * x[idx(k)];
            }
            o[idx(p)] = acc;
          }
          grads[1] = gb;
        }
      }
    });
    return grads;
  });
  return out;
}

Tensor activation(const Tensor& x, Activation kind) {
  if (!x.defined()) throw UsageError("activation: undefined input");
  const bool meta = x.is_meta();
  Tensor out = make_output(x.dims(), x.dtype(), meta);
  trace::emit(kind == Activation::relu ? "relu" : "sigmoid", x.dims(), 0);
  if (meta) return out;

  const std::int64_t total = x.numel();
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    if (kind == Activation::relu) {
#pragma omp parallel for simd schedule(static)
      for (std::int64_t i = 0; i < total; ++i) o[idx(i)] = in[idx(i)] > T(0) ? in[idx(i)] : T(0);
    } else {
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < total; ++i) o[idx(i)] = T(1) / (T(1) + std::exp(-in[idx(i)]));
    }
  });
  check_finite(out, {&x});

  autograd::record(out, {x}, [y = out.detach(), kind](const Tensor& g) {
    Tensor gx = Tensor::zeros(g.dims(), g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto yd = y.data<T>();
      auto o = gx.mutable_data<T>();
      const std::int64_t total = g.numel();
      if (kind == Activation::relu) {
        for (std::int64_t i = 0; i < total; ++i) o[idx(i)] = yd[idx(i)] > T(0) ? gd[idx(i)] : T(0);
      } else {
        for (std::int64_t i = 0; i < total; ++i) o[idx(i)] = gd[idx(i)] * yd[idx(i)] * (T(1) - yd[idx(i)]);
      }
    });
    return std::vector<Tensor>{gx};
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  if (!x.defined()) throw UsageError("scale: undefined input");
  const bool meta = x.is_meta();
  Tensor out = make_output(x.dims(), x.dtype(), meta);
  trace::emit("scale", x.dims(), x.numel());
  if (meta) return out;
  auto multiply = [factor](const Tensor& in, Tensor& dst) {
    dispatch(in.dtype(), [&]<typename T>() {
      auto a = in.data<T>();
      auto o = dst.mutable_data<T>();
      const auto f = static_cast<T>(factor);
      for (std::size_t i = 0; i < a.size(); ++i) o[i] = a[i] * f;
    });
  };
  multiply(x, out);
  check_finite(out, {&x});
  autograd::record(out, {x}, [multiply](const Tensor& g) {
    Tensor gx = Tensor::zeros(g.dims(), g.dtype());
    multiply(g, gx);
    return std::vector<Tensor>{gx};
  });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require_nchw(x, "global_avg_pool");
  return adaptive_avg_pool(x, 1, 1);
}

Tensor adaptive_avg_pool(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_nchw(x, "adaptive_avg_pool");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h < 1 || out_w < 1 || out_h > h || out_w > w || h % out_h != 0 || w % out_w != 0) {
    throw ConfigError("adaptive_avg_pool: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                      " does not tile input " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::int64_t th = h / out_h, tw = w / out_w;
  const Dims out_dims{n, c, out_h, out_w};
  const bool meta = x.is_meta();
  Tensor out = make_output(out_dims, x.dtype(), meta);
  trace::emit("avg_pool", out_dims, x.numel());
  if (meta) return out;

  const std::int64_t planes = n * c;
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    const T inv = T(1) / static_cast<T>(th * tw);
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* ip = in.data() + p * h * w;
      T* op = o.data() + p * out_h * out_w;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          T acc = 0;
          for (std::int64_t y = oy * th; y < (oy + 1) * th; ++y) {
            for (std::int64_t xx = ox * tw; xx < (ox + 1) * tw; ++xx) acc += ip[y * w + xx];
          }
          op[oy * out_w + ox] = acc * inv;
        }
      }
    }
  });

  autograd::record(out, {x}, [in_dims = x.dims(), out_h, out_w, th, tw](const Tensor& g) {
    Tensor gx = Tensor::zeros(in_dims, g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto o = gx.mutable_data<T>();
      const std::int64_t h = in_dims[2], w = in_dims[3];
      const std::int64_t planes = in_dims[0] * in_dims[1];
      const T inv = T(1) / static_cast<T>(th * tw);
      for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t y = 0; y < h; ++y) {
          for (std::int64_t xx = 0; xx < w; ++xx) {
            o[idx((p * h + y) * w + xx)] = gd[idx((p * out_h + y / th) * out_w + xx / tw)] * inv;
          }
        }
      }
    });
    return std::vector<Tensor>{gx};
  });
  return out;
}

Tensor upsample_nearest(const Tensor& x, std::int64_t factor) {
  require_nchw(x, "upsample_nearest");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1, got " + std::to_string(factor));
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Dims out_dims{n, c, h * factor, w * factor};
  const bool meta = x.is_meta();
  Tensor out = make_output(out_dims, x.dtype(), meta);
  trace::emit("upsample", out_dims, numel(out_dims));
  if (meta) return out;

  const std::int64_t planes = n * c;
  const std::int64_t ow = w * factor, oh = h * factor;
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t y = 0; y < oh; ++y) {
        const T* irow = in.data() + (p * h + y / factor) * w;
        T* orow = o.data() + (p * oh + y) * ow;
        for (std::int64_t xx = 0; xx < ow; ++xx) orow[xx] = irow[xx / factor];
      }
    }
  });

  autograd::record(out, {x}, [in_dims = x.dims(), factor](const Tensor& g) {
    Tensor gx = Tensor::zeros(in_dims, g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto o = gx.mutable_data<T>();
      const std::int64_t h = in_dims[2], w = in_dims[3];
      const std::int64_t oh = h * factor, ow = w * factor;
      const std::int64_t planes = in_dims[0] * in_dims[1];
      for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t y = 0; y < oh; ++y) {
          for (std::int64_t xx = 0; xx < ow; ++xx) {
            o[idx((p * h + y / factor) * w + xx / factor)] += gd[idx((p * oh + y) * ow + xx)];
          }
        }
      }
    });
    return std::vector<Tensor>{gx};
  });
  return out;
}

namespace {

// out channel k <- in channel perm[k]. Backward applies the inverse.
Tensor permute_channels(const Tensor& x, const std::vector<std::int64_t>& perm, std::string_view op) {
  const auto n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = x.dim(2) * x.dim(3);
  const bool meta = x.is_meta();
  Tensor out = make_output(x.dims(), x.dtype(), meta);
  trace::emit(op, x.dims(), 0);
  if (meta) return out;
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t k = 0; k < c; ++k) {
        std::copy_n(in.data() + (b * c + perm[idx(k)]) * plane, plane, o.data() + (b * c + k) * plane);
      }
    }
  });
  autograd::record(out, {x}, [perm, plane](const Tensor& g) {
    Tensor gx = Tensor::zeros(g.dims(), g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto o = gx.mutable_data<T>();
      const auto n = g.dim(0), c = g.dim(1);
      for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t k = 0; k < c; ++k) {
          std::copy_n(gd.data() + (b * c + k) * plane, plane, o.data() + (b * c + perm[idx(k)]) * plane);
        }
      }
    });
    return std::vector<Tensor>{gx};
  });
  return out;
}

}  // namespace

Tensor channel_slice(const Tensor& x, std::int64_t begin, std::int64_t count) {
  require_nchw(x, "channel_slice");
  const auto n = x.dim(0), c = x.dim(1);
  if (begin < 0 || count < 1 || begin + count > c) {
    throw ShapeError("channel_slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + std::to_string(c) + " channels");
  }
  const std::int64_t plane = x.dim(2) * x.dim(3);
  const Dims out_dims{n, count, x.dim(2), x.dim(3)};
  const bool meta = x.is_meta();
  Tensor out = make_output(out_dims, x.dtype(), meta);
  trace::emit("slice", out_dims, 0);
  if (meta) return out;
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t b = 0; b < n; ++b) {
      std::copy_n(in.data() + (b * c + begin) * plane, count * plane, o.data() + b * count * plane);
    }
  });
  autograd::record(out, {x}, [in_dims = x.dims(), begin, count, plane](const Tensor& g) {
    Tensor gx = Tensor::zeros(in_dims, g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto o = gx.mutable_data<T>();
      const auto n = in_dims[0], c = in_dims[1];
      for (std::int64_t b = 0; b < n; ++b) {
        std::copy_n(gd.data() + b * count * plane, count * plane, o.data() + (b * c + begin) * plane);
      }
    });
    return std::vector<Tensor>{gx};
  });
  return out;
}

std::pair<Tensor, Tensor> channel_split(const Tensor& x) {
  require_nchw(x, "channel_split");
  const auto c = x.dim(1);
  if (c % 2 != 0) throw ShapeError("channel_split requires an even channel count, got " + std::to_string(c));
  return {channel_slice(x, 0, c / 2), channel_slice(x, c / 2, c / 2)};
}

Tensor channel_concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("channel_concat of an empty list");
  for (const auto& p : parts) require_nchw(p, "channel_concat");
  const auto& first = parts.front();
  std::int64_t channels = 0;
  bool meta = false;
  for (const auto& p : parts) {
    if (p.dim(0) != first.dim(0) || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3)) {
      throw ShapeError("channel_concat: dims " + to_string(p.dims()) + " incompatible with " + to_string(first.dims()));
    }
    require_same_dtype(first, p, "channel_concat");
    channels += p.dim(1);
    meta = meta || p.is_meta();
  }
  const auto n = first.dim(0);
  const std::int64_t plane = first.dim(2) * first.dim(3);
  const Dims out_dims{n, channels, first.dim(2), first.dim(3)};
  Tensor out = make_output(out_dims, first.dtype(), meta);
  trace::emit("concat", out_dims, 0);
  if (meta) return out;

  std::vector<std::int64_t> offsets;
  dispatch(first.dtype(), [&]<typename T>() {
    auto o = out.mutable_data<T>();
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      offsets.push_back(offset);
      auto in = p.data<T>();
      const auto pc = p.dim(1);
      for (std::int64_t b = 0; b < n; ++b) {
        std::copy_n(in.data() + b * pc * plane, pc * plane, o.data() + (b * channels + offset) * plane);
      }
      offset += pc;
    }
  });
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::int64_t> counts;
  for (const auto& p : parts) counts.push_back(p.dim(1));
  autograd::record(out, inputs, [offsets, counts](const Tensor& g) {
    std::vector<Tensor> grads;
    autograd::NoGradGuard guard;
    for (std::size_t i = 0; i < offsets.size(); ++i) grads.push_back(channel_slice(g, offsets[i], counts[i]));
    return grads;
  });
  return out;
}

Tensor channel_shuffle(const Tensor& x, std::int64_t groups) {
  require_nchw(x, "channel_shuffle");
  const auto c = x.dim(1);
  if (groups < 1 || c % groups != 0) {
    throw ShapeError("channel_shuffle: " + std::to_string(c) + " channels not divisible by " +
                     std::to_string(groups) + " groups");
  }
  const std::int64_t per_group = c / groups;
  std::vector<std::int64_t> perm(idx(c));
  for (std::int64_t i = 0; i < per_group; ++i) {
    for (std::int64_t gi = 0; gi < groups; ++gi) perm[idx(i * groups + gi)] = gi * per_group + i;
  }
  return permute_channels(x, perm, "shuffle");
}

Tensor sum(const Tensor& x) {
  if (!x.defined()) throw UsageError("sum: undefined input");
  const bool meta = x.is_meta();
  Tensor out = make_output({}, x.dtype(), meta);
  trace::emit("sum", {}, 0);
  if (meta) return out;
  dispatch(x.dtype(), [&]<typename T>() {
    auto d = x.data<T>();
    // Accumulate in double for both precisions; the result is rounded once.
    double acc = 0.0;
    for (T v : d) acc += static_cast<double>(v);
    out.mutable_data<T>()[0] = static_cast<T>(acc);
  });
  autograd::record(out, {x}, [in_dims = x.dims()](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(in_dims, g.item(), g.dtype())};
  });
  return out;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack of an empty list");
  const auto& first = items.front();
  for (const auto& t : items) {
    if (t.dims() != first.dims()) {
      throw ShapeError("stack: dims " + to_string(t.dims()) + " differ from " + to_string(first.dims()));
    }
    require_same_dtype(first, t, "stack");
  }
  Dims out_dims{static_cast<std::int64_t>(items.size())};
  out_dims.insert(out_dims.end(), first.dims().begin(), first.dims().end());
  Tensor out = Tensor::zeros(out_dims, first.dtype());
  dispatch(first.dtype(), [&]<typename T>() {
    auto o = out.mutable_data<T>();
    const auto per = first.numel();
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto d = items[i].data<T>();
      std::copy(d.begin(), d.end(), o.begin() + static_cast<std::ptrdiff_t>(i) * per);
    }
  });
  return out;
}

}  // namespace ops
}  // namespace rtcc
