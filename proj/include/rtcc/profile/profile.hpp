#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rtcc/nn/model.hpp"

namespace rtcc::profile {

struct LayerCost {
  std::string scope;  // dotted layer path, e.g. "encoder.stage2.0.ccw1.branch1.depthwise"
  std::string op;
  Dims in_dims;  // conv2d only
  Dims out_dims;
  std::int64_t macs = 0;
};

struct ProfileReport {
  std::string config_name;
  Dims input_dims;
  std::int64_t total_params = 0;
  // stem, encoder, fpn, head in that order; absent parts are omitted.
  std::vector<std::pair<std::string, std::int64_t>> params_by_submodule;
  std::int64_t macs = 0;
  std::int64_t flops_2x = 0;
  std::vector<LayerCost> layers;

  // The two readings of a "Params (MB)" column.
  double params_millions() const { return static_cast<double>(total_params) / 1e6; }
  double params_megabytes_f32() const { return static_cast<double>(total_params) * 4.0 / 1e6; }
  std::int64_t submodule_params(std::string_view name) const;
};

ProfileReport count_params(const nn::Model& model);

// Runs the model on a shape-only input and sums per-op costs:
// conv2d Hout*Wout*Cout*Kh*Kw*Cin/groups, add/mul/upsample output elements,
// pooling input elements. Bias adds are not counted.
ProfileReport count_macs(const nn::Model& model, const Dims& input_dims);

// count_params and count_macs combined.
ProfileReport analyze(const nn::Model& model, const Dims& input_dims, std::string config_name = "model");

struct BenchOptions {
  int warmup_iters = 20;
  int timed_iters = 100;
  std::uint64_t seed = 0;
};

struct BenchReport {
  int warmup_iters = 0;
  int timed_iters = 0;
  std::vector<double> latencies_ms;
  double mean_ms = 0.0;
  double std_ms = 0.0;  // population standard deviation
  double min_ms = 0.0;
  double fps = 0.0;
};

// Statistics over recorded latencies; throws UsageError when empty.
BenchReport summarize(std::vector<double> latencies_ms, int warmup_iters);

// Times whole forward passes on one thread with a pre-generated input.
// Throws UsageError when timed_iters < 1 or warmup_iters < 0.
BenchReport benchmark(const nn::Model& model, const Dims& input_dims, const BenchOptions& options = {});

// CSV with columns config_name,h,w,params,macs,flops_2x,mean_ms,std_ms,min_ms,fps.
// Timing columns are left empty without a BenchReport.
std::string csv_header();
std::string csv_row(const ProfileReport& report, const std::optional<BenchReport>& bench = std::nullopt);

// Human-readable per-submodule and per-layer table.
void print_summary(std::ostream& out, const ProfileReport& report, std::size_t top_layers = 10);

}  // namespace rtcc::profile
