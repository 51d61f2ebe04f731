// One PASS/FAIL line per acceptance criterion. With arguments, only the listed
// criteria run (e.g. `acceptance 1 3 7`). Exit status is 0 iff all ran ones pass.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rtcc/data/data.hpp"
#include "rtcc/metrics/metrics.hpp"
#include "rtcc/profile/profile.hpp"
#include "rtcc/train/train.hpp"

using namespace rtcc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome aes_rows() {
  struct Row {
    const char* name;
    double mse, params, flops, expected;
  };
  const Row rows[] = {{"Ours", 388.6, 0.15, 1.32, 46.58}, {"MCNN", 714.6, 0.15, 11.99, 12.87}, {"STRmt", 435.8, 0.24, 2.04, 30.71}};
  Outcome o{true, ""};
  for (const auto& r : rows) {
    const double got = metrics::aes(r.mse, r.params, r.flops);
    o.passed = o.passed && std::abs(got - r.expected) <= 0.02;
    o.detail += fmt("%s=%.4f (want %.2f) ", r.name, got, r.expected);
  }
  return o;
}

Outcome gradients() {
  train::GradientSuiteOptions opts;
  opts.model_samples = 16;
  const auto results = train::gradient_suite(opts);
  Outcome o{true, ""};
  std::size_t failed = 0;
  double worst_op = 0.0;
  for (const auto& r : results) {
    if (!r.passed) {
      ++failed;
      o.detail += "failed:" + r.name + " ";
    }
    if (r.name != results.back().name) worst_op = std::max(worst_op, r.max_rel_error);
  }
  const auto& model = results.back();
  o.passed = failed == 0;
  o.detail += fmt("%zu checks, worst op rel %.2e, model rel %.2e over %zu elements (%zu settled by abs 1e-8)",
                  results.size(), worst_op, model.max_rel_error, model.checked, model.within_abs_tolerance);
  return o;
}

profile::ProfileReport analyze(const nn::ModelConfig& config, const Dims& dims = {1, 3, 512, 1024}) {
  return profile::analyze(nn::Model::build(config, 0), dims);
}

Outcome architecture() {
  const auto full = analyze({});
  nn::ModelConfig stem_only, stem_encoder;
  stem_only.ablation_mode = nn::AblationMode::stem_only;
  stem_encoder.ablation_mode = nn::AblationMode::stem_encoder;
  const auto p_stem = analyze(stem_only).total_params;
  const auto p_enc = analyze(stem_encoder).total_params;

  const bool params_ok = full.total_params >= 50'000 && full.total_params <= 300'000;
  const bool macs_ok = full.macs >= 600'000'000 && full.macs <= 2'000'000'000;
  const bool ablation_ok = p_stem < p_enc && p_enc < full.total_params;

  bool repeats_ok = true;
  std::string repeats;
  std::int64_t prev_params = 0, prev_macs = 0;
  for (std::int64_t r : {2, 4, 6}) {
    nn::ModelConfig c;
    c.stage_repeats = {2, r};
    const auto rep = analyze(c);
    repeats_ok = repeats_ok && rep.total_params > prev_params && rep.macs > prev_macs;
    prev_params = rep.total_params;
    prev_macs = rep.macs;
    repeats += fmt("(2,%lld):%lld/%lld ", static_cast<long long>(r), static_cast<long long>(rep.total_params),
                   static_cast<long long>(rep.macs));
  }
  return {params_ok && macs_ok && ablation_ok && repeats_ok,
          fmt("params=%lld macs@512x1024=%lld; stem_only=%lld < stem_encoder=%lld < full; repeats params/macs %s",
              static_cast<long long>(full.total_params), static_cast<long long>(full.macs), static_cast<long long>(p_stem),
              static_cast<long long>(p_enc), repeats.c_str())};
}

Outcome shapes() {
  const nn::Model model = nn::Model::build({}, 0);
  Outcome o{true, ""};
  for (std::int64_t h : {64, 128, 256}) {
    for (std::int64_t w : {64, 128, 192}) {
      const Dims want{1, 1, h / 4, w / 4};
      const Dims got = model.forward(Tensor::zeros({1, 3, h, w})).dims();
      if (got != want) {
        o.detail += fmt("%lldx%lld -> %s ", static_cast<long long>(h), static_cast<long long>(w), to_string(got).c_str());
      }
    }
  }
  o.passed = o.detail.empty();
  if (o.passed) o.detail = "9 input sizes give (1,1,H/4,W/4)";
  return o;
}

Outcome conservation() {
  std::mt19937_64 rng(2024);
  constexpr std::int64_t side = 384;  // 96 cells: room for a 4*sigma margin at sigma 8
  double worst = 0.0;
  for (int scene = 0; scene < 200; ++scene) {
    const double sigma = std::uniform_real_distribution<double>(1.0, 8.0)(rng);
    const int heads = std::uniform_int_distribution<int>(0, 50)(rng);
    const double margin = 4.0 * sigma * static_cast<double>(data::kCellScale);
    std::uniform_real_distribution<double> pos(margin, static_cast<double>(side) - margin);
    data::HeadPoints points(static_cast<std::size_t>(heads));
    for (auto& p : points) p = {pos(rng), pos(rng)};
    const auto density = data::gaussian_density(points, side, side, sigma).to_vector();
    double sum = 0.0;
    for (double v : density) sum += v;
    worst = std::max(worst, std::abs(sum - heads));
  }
  return {worst < 1e-4, fmt("200 f32 maps, worst |sum - count| = %.3e", worst)};
}

Outcome metric_identities() {
  std::mt19937_64 rng(7);
  bool ordered = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    std::uniform_real_distribution<double> count(0.0, 500.0);
    std::vector<double> pred(n), gt(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = count(rng);
      gt[i] = count(rng) + 1.0;
    }
    const auto m = metrics::compute_metrics(pred, gt);
    ordered = ordered && m.mae <= m.mse;
  }
  const std::vector<double> pred{10, 20}, gt{12, 18};
  const auto m = metrics::compute_metrics(pred, gt);
  const bool exact = m.mae == 2.0 && m.mse == 2.0 && m.nae && *m.nae == 0.15;
  return {ordered && exact, fmt("MAE <= MSE on 1000 vectors: %s; example -> (%s, %s, %s)", ordered ? "yes" : "no",
                                metrics::format_number(m.mae).c_str(), metrics::format_number(m.mse).c_str(),
                                m.nae ? metrics::format_number(*m.nae).c_str() : "none")};
}

// The desk-scale overfit run shared by criteria 6 and 8.
struct OverfitRun {
  std::vector<data::LabeledImage> scenes;
  double mean_count = 0.0;
  double eval_mae = 0.0;
  train::TrainLog log;
  fs::path checkpoint;
  double seconds = 0.0;
};

OverfitRun overfit(const fs::path& dir) {
  OverfitRun run;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 8; ++i) {
    const int heads = std::uniform_int_distribution<int>(5, 30)(rng);
    auto scene = data::synth_scene(heads, 128, 128, 1000 + static_cast<std::uint64_t>(i));
    run.scenes.push_back({std::to_string(i), scene.image, scene.points});
    run.mean_count += heads / 8.0;
  }
  nn::ModelConfig mc;
  mc.output_scale = 0.01;
  nn::Model model = nn::Model::build(mc, 0);
  train::TrainConfig tc;
  tc.lr_init = 3e-3;
  tc.batch_size = 8;
  tc.epochs = 300;  // one step per epoch
  const auto t0 = std::chrono::steady_clock::now();
  run.log = train::train_loop(model, run.scenes, tc, {nullptr, dir});
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& s : run.scenes) {
    run.eval_mae += std::abs(train::predict_count(model, s.image) - static_cast<double>(s.points.size())) / 8.0;
  }
  run.checkpoint = dir / "final";
  return run;
}

Outcome learning(const OverfitRun& run) {
  const double ratio = run.eval_mae / run.mean_count;
  const double drop = run.log.step_losses.front() / run.log.step_losses.back();
  return {run.log.step_losses.size() <= 500 && ratio < 0.10 && drop >= 100.0,
          fmt("%zu steps in %.0f s; count MAE %.4f vs mean count %.3f (%.2f%%); loss %.3e -> %.3e (%.0fx)",
              run.log.step_losses.size(), run.seconds, run.eval_mae, run.mean_count, 100.0 * ratio,
              run.log.step_losses.front(), run.log.step_losses.back(), drop)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const OverfitRun& a, const OverfitRun& b) {
  std::set<fs::path> names;
  for (const auto& dir : {a.checkpoint, b.checkpoint}) {
    for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename());
  }
  std::size_t differing = 0;
  std::uintmax_t bytes = 0;
  for (const auto& name : names) {
    const auto x = slurp(a.checkpoint / name), y = slurp(b.checkpoint / name);
    if (x.empty() || x != y) ++differing;
    bytes += x.size();
  }
  return {differing == 0 && !names.empty(),
          fmt("%zu checkpoint files (%ju bytes), %zu differ", names.size(), bytes, differing)};
}

Outcome bench() {
  Outcome o{true, ""};
  profile::BenchOptions opts;
  opts.warmup_iters = 2;
  opts.timed_iters = 5;
  const nn::Model model = nn::Model::build({}, 0);
  for (const Dims& dims : {Dims{1, 3, 576, 768}, Dims{1, 3, 1024, 1024}}) {
    const auto r = profile::benchmark(model, dims, opts);
    const bool ok = std::isfinite(r.fps) && r.fps > 0 && std::abs(r.fps * r.mean_ms - 1000.0) <= 1e-9 &&
                    r.min_ms <= r.mean_ms && r.latencies_ms.size() == static_cast<std::size_t>(opts.timed_iters);
    o.passed = o.passed && ok;
    o.detail += fmt("%lldx%lld: mean %.1f ms, %.2f fps; ", static_cast<long long>(dims[2]),
                    static_cast<long long>(dims[3]), r.mean_ms, r.fps);
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto on = [&](int id) { return wanted.empty() || wanted.count(id) > 0; };

  int failures = 0;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& fn) {
    if (!on(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::printf("[%s] %d %s: %s\n", o.passed ? "PASS" : "FAIL", id, title, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "AES reproduction", aes_rows);
  report(2, "gradient suite", gradients);
  report(3, "architecture budget", architecture);
  report(4, "shape contract", shapes);
  report(5, "density conservation", conservation);

  const fs::path root = fs::temp_directory_path() / ("rtcc_acceptance_" + std::to_string(::getpid()));
  std::optional<OverfitRun> first;
  report(6, "desk-scale learning", [&] {
    first = overfit(root / "a");
    return learning(*first);
  });
  report(7, "metric identities", metric_identities);
  report(8, "determinism", [&] {
    if (!first) first = overfit(root / "a");
    return determinism(*first, overfit(root / "b"));
  });
  fs::remove_all(root);
  report(9, "benchmark well-formedness", bench);
  return failures == 0 ? 0 : 1;
}
