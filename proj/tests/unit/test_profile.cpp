#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "rtcc/error.hpp"
#include "rtcc/profile/profile.hpp"
#include "rtcc/tensor/ops.hpp"
#include "rtcc/tensor/trace.hpp"

using namespace rtcc;

namespace {

// Counts multiplies of a direct convolution loop nest. Window placements are
// found by sliding, not by the output-size formula.
std::int64_t direct_conv_multiplies(const Dims& in, const ConvSpec& s) {
  auto positions = [](std::int64_t extent, std::int64_t k, std::int64_t stride, std::int64_t pad, std::int64_t dil) {
    std::int64_t n = 0;
    for (std::int64_t start = -pad; start + (k - 1) * dil <= extent - 1 + pad; start += stride) ++n;
    return n;
  };
  const std::int64_t oh = positions(in[2], s.kernel_h, s.stride, s.padding, s.dilation);
  const std::int64_t ow = positions(in[3], s.kernel_w, s.stride, s.padding, s.dilation);
  const std::int64_t per_group = s.in_channels / s.groups;
  std::int64_t count = 0;
  for (std::int64_t n = 0; n < in[0]; ++n)
    for (std::int64_t oc = 0; oc < s.out_channels; ++oc)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x)
          for (std::int64_t ic = 0; ic < per_group; ++ic)
            for (std::int64_t ky = 0; ky < s.kernel_h; ++ky)
              for (std::int64_t kx = 0; kx < s.kernel_w; ++kx) ++count;
  return count;
}

class ConvCapture : public trace::Recorder {
 public:
  void on_op(const trace::OpEvent& e) override {
    if (e.conv) events.push_back({e.in_dims, *e.conv, e.macs});
  }
  struct Event {
    Dims in;
    ConvSpec spec;
    std::int64_t macs;
  };
  std::vector<Event> events;
};

nn::ModelConfig with_mode(nn::AblationMode mode) {
  nn::ModelConfig c;
  c.ablation_mode = mode;
  return c;
}

}  // namespace

TEST_CASE("parameter arithmetic examples") {
  nn::ParameterStore store;
  nn::LayerBuilder b(store, 1, DType::f32);
  b.conv("dense", ConvSpec{16, 32, 3, 3, 1, 1, 1, 1, true});
  CHECK(store.count() == 4640);
  CHECK(ConvSpec{16, 32, 3, 3, 1, 1, 1, 1, true}.param_count() == 16 * 32 * 9 + 32);
  CHECK(ConvSpec{36, 36, 3, 3, 1, 1, 1, 36, true}.param_count() == 360);
}

TEST_CASE("MAC arithmetic examples") {
  const ConvSpec s{16, 32, 3, 3, 1, 1, 1, 1, true};
  const auto g = kernels::ConvGeometry::make({1, 16, 8, 8}, s);
  CHECK(g.macs() == 294912);
  CHECK(direct_conv_multiplies({1, 16, 8, 8}, s) == 294912);

  const auto one = kernels::ConvGeometry::make({1, 1, 1, 1}, ConvSpec{1, 1, 1, 1, 1, 0, 1, 1, true});
  CHECK(one.macs() == 1);
}

TEST_CASE("report totals") {
  const nn::Model m = nn::Model::build(nn::ModelConfig{}, 1);
  const auto r = profile::analyze(m, {1, 3, 64, 64}, "default");
  std::int64_t sum = 0;
  for (const auto& [part, n] : r.params_by_submodule) sum += n;
  CHECK(sum == r.total_params);
  CHECK(r.total_params == m.parameter_count());
  CHECK(r.params_by_submodule.size() == 4);
  CHECK(r.submodule_params("fpn") > 0);
  CHECK(r.flops_2x == 2 * r.macs);
  std::int64_t layer_sum = 0;
  for (const auto& l : r.layers) layer_sum += l.macs;
  CHECK(layer_sum == r.macs);
  CHECK(r.params_millions() == doctest::Approx(r.total_params / 1e6));

  const auto stem_only = profile::count_params(nn::Model::build(with_mode(nn::AblationMode::stem_only), 1));
  CHECK(stem_only.params_by_submodule.size() == 2);
  CHECK(stem_only.submodule_params("encoder") == 0);
}

TEST_CASE("conv MACs match a direct-convolution count for every layer of the default model") {
  const nn::Model m = nn::Model::build(nn::ModelConfig{}, 1);
  ConvCapture capture;
  {
    trace::ScopedRecorder scoped(capture);
    m.forward(Tensor::meta({1, 3, 64, 64}));
  }
  REQUIRE(capture.events.size() > 100);
  for (const auto& e : capture.events) {
    CAPTURE(e.spec.describe());
    REQUIRE(e.macs == direct_conv_multiplies(e.in, e.spec));
  }
}

TEST_CASE("MACs scale with input area except for pooled-map layers") {
  const nn::Model m = nn::Model::build(nn::ModelConfig{}, 1);
  const auto small = profile::count_macs(m, {1, 3, 64, 64});
  const auto large = profile::count_macs(m, {1, 3, 128, 128});
  REQUIRE(small.layers.size() == large.layers.size());
  std::int64_t scaling_small = 0, scaling_large = 0, fixed_small = 0, fixed_large = 0;
  for (std::size_t i = 0; i < small.layers.size(); ++i) {
    const auto& a = small.layers[i];
    const auto& b = large.layers[i];
    REQUIRE(a.scope == b.scope);
    REQUIRE(a.op == b.op);
    // Layers producing a globally pooled 1x1 map cost the same at any size.
    const bool pooled_map = a.out_dims.size() == 4 && a.out_dims[2] == 1 && a.out_dims[3] == 1 && a.op != "avg_pool";
    if (pooled_map) {
      fixed_small += a.macs;
      fixed_large += b.macs;
    } else {
      scaling_small += a.macs;
      scaling_large += b.macs;
    }
  }
  CHECK(scaling_large == 4 * scaling_small);
  CHECK(fixed_large == fixed_small);
  CHECK(fixed_small > 0);
  CHECK(large.macs == 4 * small.macs - 3 * fixed_small);
}

TEST_CASE("params are independent of input size; MACs grow with repeats") {
  const nn::Model m = nn::Model::build(nn::ModelConfig{}, 1);
  CHECK(profile::analyze(m, {1, 3, 64, 64}).total_params == profile::analyze(m, {1, 3, 256, 128}).total_params);

  std::int64_t previous = 0;
  for (std::int64_t r3 : {2, 4, 6}) {
    nn::ModelConfig c;
    c.stage_repeats = {2, r3};
    const auto macs = profile::count_macs(nn::Model::build(c, 1), {1, 3, 128, 128}).macs;
    CHECK(macs > previous);
    previous = macs;
  }
}

TEST_CASE("default model budget at 512x1024") {
  const auto r = profile::analyze(nn::Model::build(nn::ModelConfig{}, 1), {1, 3, 512, 1024});
  CHECK(r.total_params >= 50'000);
  CHECK(r.total_params <= 300'000);
  CHECK(r.macs >= 600'000'000);
  CHECK(r.macs <= 2'000'000'000);
}

TEST_CASE("summarize statistics") {
  const auto one = profile::summarize({4.0}, 0);
  CHECK(one.mean_ms == 4.0);
  CHECK(one.min_ms == 4.0);
  CHECK(one.std_ms == 0.0);
  CHECK(one.fps == 250.0);

  const auto r = profile::summarize({1.0, 2.0, 3.0, 6.0}, 5);
  CHECK(r.mean_ms == 3.0);
  CHECK(r.min_ms == 1.0);
  CHECK(r.std_ms == doctest::Approx(std::sqrt(3.5)));
  CHECK(r.warmup_iters == 5);
  CHECK(r.timed_iters == 4);
  CHECK(r.fps * r.mean_ms == doctest::Approx(1000.0));
  CHECK_THROWS_AS(profile::summarize({}, 0), UsageError);
}

TEST_CASE("benchmark run is well formed") {
  const nn::Model m = nn::Model::build(nn::ModelConfig{}, 1);
  profile::BenchOptions opt;
  opt.warmup_iters = 1;
  opt.timed_iters = 1;
  const auto single = profile::benchmark(m, {1, 3, 64, 64}, opt);
  REQUIRE(single.latencies_ms.size() == 1);
  CHECK(single.mean_ms == single.min_ms);
  CHECK(single.mean_ms == single.latencies_ms[0]);

  opt.timed_iters = 3;
  const auto r = profile::benchmark(m, {1, 3, 64, 64}, opt);
  CHECK(r.latencies_ms.size() == 3);
  CHECK(r.min_ms <= r.mean_ms);
  CHECK(r.fps > 0);
  CHECK(std::isfinite(r.fps));
  CHECK(r.fps * r.mean_ms == doctest::Approx(1000.0));

  opt.timed_iters = 0;
  CHECK_THROWS_AS(profile::benchmark(m, {1, 3, 64, 64}, opt), UsageError);
}

TEST_CASE("CSV layout") {
  CHECK(profile::csv_header() == "config_name,h,w,params,macs,flops_2x,mean_ms,std_ms,min_ms,fps");
  profile::ProfileReport r;
  r.config_name = "tiny";
  r.input_dims = {1, 3, 32, 64};
  r.total_params = 10;
  r.macs = 7;
  r.flops_2x = 14;
  CHECK(profile::csv_row(r) == "tiny,32,64,10,7,14,,,,");
  const auto row = profile::csv_row(r, profile::summarize({2.0}, 0));
  CHECK(row == "tiny,32,64,10,7,14,2.000000,0.000000,2.000000,500");

  std::ostringstream os;
  profile::print_summary(os, profile::analyze(nn::Model::build(nn::ModelConfig{}, 1), {1, 3, 64, 64}));
  CHECK(os.str().find("stem") != std::string::npos);
  CHECK(os.str().find("top layers by MACs") != std::string::npos);
}
