#include "rtcc/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "rtcc/error.hpp"
#include "rtcc/tensor/ops.hpp"

namespace rtcc::gradcheck {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

Tensor random_tensor(const Dims& dims, std::uint64_t seed, DType dtype, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> values(static_cast<std::size_t>(numel(dims)));
  for (auto& v : values) v = normal(rng);
  return Tensor::from_values(dims, values, dtype);
}

Tensor random_projection(const Tensor& x, std::uint64_t seed) {
  Tensor r = random_tensor(x.dims(), seed, x.dtype());
  return ops::sum(ops::mul(x, r));
}

namespace {

double eval(const ScalarFn& fn, std::span<const Tensor> inputs) {
  autograd::NoGradGuard guard;
  return fn(inputs).item();
}

std::vector<std::size_t> pick_elements(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (n <= limit) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

void note(Result& r, double analytic, double numeric, double tolerance, double abs_tolerance,
          const std::string& where) {
  ++r.checked;
  const double abs_err = std::abs(analytic - numeric);
  r.max_abs_error = std::max(r.max_abs_error, abs_err);
  const double err = relative_error(analytic, numeric);
  if (err >= tolerance && abs_err <= abs_tolerance) {
    ++r.within_abs_tolerance;
    return;
  }
  if (err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst = where;
  }
}

}  // namespace

Result check(const std::string& name, const ScalarFn& fn, std::vector<Tensor> inputs, const Options& options) {
  std::vector<bool> had_grad;
  for (auto& t : inputs) {
    if (!t.defined() || t.dtype() != DType::f64) throw UsageError("gradcheck: inputs must be defined f64 tensors");
    if (!t.is_leaf()) throw UsageError("gradcheck: inputs must be leaves");
    had_grad.push_back(t.requires_grad());
    t.zero_grad();
    t.set_requires_grad(true);
  }
  Tensor loss = fn(inputs);
  loss.backward();

  Result result;
  result.name = name;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& t = inputs[i];
    Tensor grad = t.grad();
    auto data = t.mutable_data<double>();
    for (std::size_t e : pick_elements(data.size(), options.max_elements, rng)) {
      const double saved = data[e];
      data[e] = saved + h;
      const double up = eval(fn, inputs);
      data[e] = saved - h;
      const double down = eval(fn, inputs);
      data[e] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grad.defined() ? grad.value(static_cast<std::int64_t>(e)) : 0.0;
      std::ostringstream where;
      where << "input " << i << " element " << e << " analytic " << analytic << " numeric " << numeric;
      note(result, analytic, numeric, options.tolerance, options.abs_tolerance, where.str());
    }
    if (options.directional) {
      std::normal_distribution<double> normal;
      std::vector<double> dir(data.size());
      for (auto& v : dir) v = normal(rng);
      // Unit length, so the displacement is `step` regardless of tensor size.
      double norm = 0.0;
      for (double v : dir) norm += v * v;
      norm = std::sqrt(norm);
      for (auto& v : dir) v /= norm;
      double analytic = 0.0;
      if (grad.defined()) {
        auto g = grad.data<double>();
        for (std::size_t e = 0; e < dir.size(); ++e) analytic += g[e] * dir[e];
      }
      const std::vector<double> saved(data.begin(), data.end());
      for (std::size_t e = 0; e < dir.size(); ++e) data[e] = saved[e] + h * dir[e];
      const double up = eval(fn, inputs);
      for (std::size_t e = 0; e < dir.size(); ++e) data[e] = saved[e] - h * dir[e];
      const double down = eval(fn, inputs);
      std::copy(saved.begin(), saved.end(), data.begin());
      const double numeric = (up - down) / (2 * h);
      std::ostringstream where;
      where << "input " << i << " direction, analytic " << analytic << " numeric " << numeric;
      note(result, analytic, numeric, options.tolerance, options.abs_tolerance, where.str());
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].zero_grad();
    inputs[i].set_requires_grad(had_grad[i]);
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

std::vector<Result> op_suite(const Options& options) {
  std::vector<Result> results;
  auto run = [&](const std::string& name, const ScalarFn& fn, std::vector<Tensor> inputs) {
    results.push_back(check(name, fn, std::move(inputs), options));
  };

  struct ConvCase {
    const char* name;
    ConvSpec spec;
    Dims input;
  };
  const ConvCase conv_cases[] = {
      {"conv2d k3 s1 p1", {2, 3, 3, 3, 1, 1, 1, 1, true}, {2, 2, 6, 5}},
      {"conv2d k5 s2 p2", {3, 4, 5, 5, 2, 2, 1, 1, true}, {1, 3, 9, 8}},
      {"conv2d k3 d2 s2 p2", {2, 2, 3, 3, 2, 2, 2, 1, true}, {1, 2, 8, 8}},
      {"conv2d depthwise k3 s2", {4, 4, 3, 3, 2, 1, 1, 4, true}, {2, 4, 7, 6}},
      {"conv2d pointwise no-bias", {4, 6, 1, 1, 1, 0, 1, 1, false}, {1, 4, 3, 4}},
      {"conv2d grouped", {4, 6, 3, 3, 1, 1, 1, 2, true}, {1, 4, 5, 5}},
  };
  std::uint64_t seed = options.seed * 1000;
  for (const auto& c : conv_cases) {
    const ConvSpec spec = c.spec;
    std::vector<Tensor> inputs{random_tensor(c.input, ++seed), random_tensor(spec.weight_dims(), ++seed)};
    if (spec.has_bias) inputs.push_back(random_tensor({spec.out_channels}, ++seed));
    const std::uint64_t proj = ++seed;
    run(c.name,
        [spec, proj](std::span<const Tensor> in) {
          Tensor out = ops::conv2d(in[0], spec, in[1], spec.has_bias ? in[2] : Tensor());
          return random_projection(out, proj);
        },
        std::move(inputs));
  }

  {
    const std::uint64_t proj = ++seed;
    run("add", [proj](std::span<const Tensor> in) { return random_projection(ops::add(in[0], in[1]), proj); },
        {random_tensor({2, 3, 4, 4}, ++seed), random_tensor({2, 3, 4, 4}, ++seed)});
    run("mul", [proj](std::span<const Tensor> in) { return random_projection(ops::mul(in[0], in[1]), proj); },
        {random_tensor({2, 3, 4, 4}, ++seed), random_tensor({2, 3, 4, 4}, ++seed)});
    run("add broadcast", [proj](std::span<const Tensor> in) { return random_projection(ops::add(in[0], in[1]), proj); },
        {random_tensor({2, 3, 4, 4}, ++seed), random_tensor({2, 3, 1, 1}, ++seed)});
    run("mul broadcast", [proj](std::span<const Tensor> in) { return random_projection(ops::mul(in[0], in[1]), proj); },
        {random_tensor({2, 3, 4, 4}, ++seed), random_tensor({2, 3, 1, 1}, ++seed)});
    run("relu", [proj](std::span<const Tensor> in) { return random_projection(ops::relu(in[0]), proj); },
        {random_tensor({2, 3, 4, 4}, ++seed)});
    run("sigmoid", [proj](std::span<const Tensor> in) { return random_projection(ops::sigmoid(in[0]), proj); },
        {random_tensor({2, 3, 4, 4}, ++seed, DType::f64, 2.0)});
    run("scale", [proj](std::span<const Tensor> in) { return random_projection(ops::scale(in[0], -0.37), proj); },
        {random_tensor({2, 3, 4, 4}, ++seed)});
    run("global_avg_pool", [proj](std::span<const Tensor> in) { return random_projection(ops::global_avg_pool(in[0]), proj); },
        {random_tensor({2, 3, 4, 6}, ++seed)});
    run("adaptive_avg_pool", [proj](std::span<const Tensor> in) {
          return random_projection(ops::adaptive_avg_pool(in[0], 2, 3), proj);
        },
        {random_tensor({2, 3, 4, 6}, ++seed)});
    run("upsample_nearest x2", [proj](std::span<const Tensor> in) {
          return random_projection(ops::upsample_nearest(in[0], 2), proj);
        },
        {random_tensor({1, 3, 3, 4}, ++seed)});
    run("upsample_nearest x4", [proj](std::span<const Tensor> in) {
          return random_projection(ops::upsample_nearest(in[0], 4), proj);
        },
        {random_tensor({1, 2, 2, 2}, ++seed)});
    run("channel_split", [proj](std::span<const Tensor> in) {
          auto [a, b] = ops::channel_split(in[0]);
          return ops::add(random_projection(a, proj), random_projection(ops::mul(b, b), proj + 1));
        },
        {random_tensor({2, 4, 3, 3}, ++seed)});
    run("channel_slice", [proj](std::span<const Tensor> in) {
          return random_projection(ops::channel_slice(in[0], 1, 3), proj);
        },
        {random_tensor({2, 5, 3, 2}, ++seed)});
    run("reshape", [proj](std::span<const Tensor> in) {
          return random_projection(ops::mul(in[0].reshape({2, 3, 2, 4}), in[0].reshape({2, 3, 2, 4})), proj);
        },
        {random_tensor({2, 3, 8}, ++seed)});
    run("channel_concat", [proj](std::span<const Tensor> in) {
          return random_projection(ops::channel_concat(in), proj);
        },
        {random_tensor({2, 2, 3, 3}, ++seed), random_tensor({2, 3, 3, 3}, ++seed), random_tensor({2, 1, 3, 3}, ++seed)});
    run("channel_shuffle", [proj](std::span<const Tensor> in) {
          return random_projection(ops::channel_shuffle(in[0], 3), proj);
        },
        {random_tensor({2, 6, 2, 3}, ++seed)});
    run("sum", [](std::span<const Tensor> in) { return ops::sum(in[0]); }, {random_tensor({2, 3, 2, 2}, ++seed)});
  }
  return results;
}

}  // namespace rtcc::gradcheck
