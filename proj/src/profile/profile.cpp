#include "rtcc/profile/profile.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "rtcc/error.hpp"
#include "rtcc/tensor/gradcheck.hpp"
#include "rtcc/tensor/kernels.hpp"
#include "rtcc/tensor/trace.hpp"

#ifdef __linux__
#include <sched.h>
#endif

namespace rtcc::profile {

namespace {

class CostRecorder : public trace::Recorder {
 public:
  void on_op(const trace::OpEvent& e) override {
    layers.push_back({std::string(e.scope), std::string(e.op), e.in_dims, e.out_dims, e.macs});
  }
  std::vector<LayerCost> layers;
};

// Restricts the calling thread to one CPU and OpenMP to one thread.
class SingleThreaded {
 public:
  SingleThreaded() : threads_(kernels::omp::max_threads()) {
    kernels::omp::set_threads(1);
#ifdef __linux__
    pinned_ = sched_getaffinity(0, sizeof(saved_), &saved_) == 0;
    const int cpu = sched_getcpu();
    if (pinned_ && cpu >= 0) {
      cpu_set_t one;
      CPU_ZERO(&one);
      CPU_SET(cpu, &one);
      pinned_ = sched_setaffinity(0, sizeof(one), &one) == 0;
    }
#endif
  }
  ~SingleThreaded() {
#ifdef __linux__
    if (pinned_) sched_setaffinity(0, sizeof(saved_), &saved_);
#endif
    kernels::omp::set_threads(threads_);
  }
  SingleThreaded(const SingleThreaded&) = delete;
  SingleThreaded& operator=(const SingleThreaded&) = delete;

 private:
  int threads_;
#ifdef __linux__
  cpu_set_t saved_{};
  bool pinned_ = false;
#endif
};

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

std::int64_t ProfileReport::submodule_params(std::string_view name) const {
  for (const auto& [part, count] : params_by_submodule) {
    if (part == name) return count;
  }
  return 0;
}

ProfileReport count_params(const nn::Model& model) {
  ProfileReport r;
  static constexpr std::string_view parts[] = {"stem", "encoder", "fpn", "head"};
  for (auto part : parts) {
    std::int64_t n = 0;
    bool seen = false;
    for (const auto& p : model.parameters()) {
      const std::string_view name = p.name;
      if (name.substr(0, name.find('.')) == part) {
        n += p.tensor.numel();
        seen = true;
      }
    }
    if (seen) r.params_by_submodule.emplace_back(std::string(part), n);
  }
  r.total_params = model.parameter_count();
  return r;
}

ProfileReport count_macs(const nn::Model& model, const Dims& input_dims) {
  CostRecorder recorder;
  {
    trace::ScopedRecorder scoped(recorder);
    autograd::NoGradGuard no_grad;
    model.forward(Tensor::meta(input_dims, model.dtype()));
  }
  ProfileReport r;
  r.input_dims = input_dims;
  for (const auto& layer : recorder.layers) r.macs += layer.macs;
  r.flops_2x = 2 * r.macs;
  r.layers = std::move(recorder.layers);
  return r;
}

ProfileReport analyze(const nn::Model& model, const Dims& input_dims, std::string config_name) {
  ProfileReport r = count_macs(model, input_dims);
  ProfileReport p = count_params(model);
  r.total_params = p.total_params;
  r.params_by_submodule = std::move(p.params_by_submodule);
  r.config_name = std::move(config_name);
  return r;
}

BenchReport summarize(std::vector<double> latencies_ms, int warmup_iters) {
  if (latencies_ms.empty()) throw UsageError("benchmark needs at least one timed iteration");
  BenchReport r;
  r.warmup_iters = warmup_iters;
  r.timed_iters = static_cast<int>(latencies_ms.size());
  const double n = static_cast<double>(latencies_ms.size());
  r.mean_ms = std::accumulate(latencies_ms.begin(), latencies_ms.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : latencies_ms) sq += (v - r.mean_ms) * (v - r.mean_ms);
  r.std_ms = std::sqrt(sq / n);
  r.min_ms = *std::min_element(latencies_ms.begin(), latencies_ms.end());
  // Equal samples can average to just below their value through rounding.
  r.min_ms = std::min(r.min_ms, r.mean_ms);
  r.fps = 1000.0 / r.mean_ms;
  r.latencies_ms = std::move(latencies_ms);
  return r;
}

BenchReport benchmark(const nn::Model& model, const Dims& input_dims, const BenchOptions& options) {
  if (options.timed_iters < 1) throw UsageError("benchmark: timed iterations must be >= 1");
  if (options.warmup_iters < 0) throw UsageError("benchmark: warmup iterations must be >= 0");
  const Tensor input = gradcheck::random_tensor(input_dims, options.seed, model.dtype());
  SingleThreaded single;
  autograd::NoGradGuard no_grad;
  for (int i = 0; i < options.warmup_iters; ++i) model.forward(input);
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(options.timed_iters));
  for (int i = 0; i < options.timed_iters; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const Tensor out = model.forward(input);
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  return summarize(std::move(samples), options.warmup_iters);
}

std::string csv_header() { return "config_name,h,w,params,macs,flops_2x,mean_ms,std_ms,min_ms,fps"; }

std::string csv_row(const ProfileReport& report, const std::optional<BenchReport>& bench) {
  std::ostringstream os;
  const auto& d = report.input_dims;
  os << report.config_name << ',' << (d.size() == 4 ? d[2] : 0) << ',' << (d.size() == 4 ? d[3] : 0) << ','
     << report.total_params << ',' << report.macs << ',' << report.flops_2x << ',';
  if (bench) {
    os << fixed(bench->mean_ms, 6) << ',' << fixed(bench->std_ms, 6) << ',' << fixed(bench->min_ms, 6) << ','
       << std::setprecision(10) << bench->fps;
  } else {
    os << ",,,";
  }
  return os.str();
}

void print_summary(std::ostream& out, const ProfileReport& report, std::size_t top_layers) {
  out << "input " << to_string(report.input_dims) << ": " << report.total_params << " params ("
      << fixed(report.params_millions(), 3) << " M, " << fixed(report.params_megabytes_f32(), 3) << " MB as f32), "
      << report.macs << " MACs (" << fixed(static_cast<double>(report.macs) / 1e9, 3) << " G), flops_2x "
      << report.flops_2x << '\n';
  for (const auto& [part, count] : report.params_by_submodule) {
    out << "  " << std::left << std::setw(8) << part << std::right << std::setw(10) << count << " params\n";
  }
  std::vector<const LayerCost*> sorted;
  for (const auto& l : report.layers) {
    if (l.macs > 0) sorted.push_back(&l);
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->macs > b->macs; });
  if (sorted.size() > top_layers) sorted.resize(top_layers);
  if (!sorted.empty()) out << "  top layers by MACs:\n";
  for (const auto* l : sorted) {
    out << "    " << std::setw(12) << l->macs << "  " << l->op << "  " << l->scope << "  -> " << to_string(l->out_dims)
        << '\n';
  }
}

}  // namespace rtcc::profile
