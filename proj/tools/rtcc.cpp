// rtcc: command-line front end for synthesis, training, evaluation,
// prediction, profiling, benchmarking and gradient checks.
//
// Data goes to stdout or files, human-readable progress to stderr.
// Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rtcc/data/data.hpp"
#include "rtcc/error.hpp"
#include "rtcc/metrics/metrics.hpp"
#include "rtcc/nn/model.hpp"
#include "rtcc/profile/profile.hpp"
#include "rtcc/tensor/ctf.hpp"
#include "rtcc/tensor/kernels.hpp"
#include "rtcc/train/train.hpp"

namespace fs = std::filesystem;
using namespace rtcc;

namespace {

struct ImageDims {
  std::int64_t h = 0;
  std::int64_t w = 0;
};

// "HxW", height first.
ImageDims parse_dims(const std::string& text) {
  const auto x = text.find('x');
  ImageDims d;
  auto number = [&](std::string_view s, std::int64_t& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && out > 0;
  };
  if (x == std::string::npos || !number(std::string_view(text).substr(0, x), d.h) ||
      !number(std::string_view(text).substr(x + 1), d.w)) {
    throw UsageError("dims must look like HxW with positive integers, got '" + text + "'");
  }
  if (d.h % 16 != 0 || d.w % 16 != 0) throw UsageError("dims " + text + " must both be divisible by 16");
  return d;
}

nn::ModelConfig model_config_from(const std::string& path) {
  if (path.empty()) return {};
  return train::load_run_config(path).model;
}

std::string config_name(const std::string& path) { return path.empty() ? "default" : fs::path(path).stem().string(); }

std::string scene_id(std::int64_t i, std::int64_t count) {
  const std::size_t width = std::max<std::size_t>(4, std::to_string(std::max<std::int64_t>(count - 1, 0)).size());
  std::string id = std::to_string(i);
  id.insert(0, width - id.size(), '0');
  return id;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  std::int64_t count = 0;
  std::int64_t heads_min = 5;
  std::int64_t heads_max = 30;
  std::string dims = "128x128";
  std::string out;
  std::uint64_t seed = 0;
  double sigma = data::kDefaultSigma;
};

int run_synth(const SynthArgs& a) {
  if (a.heads_min < 0 || a.heads_max < a.heads_min) throw UsageError("need 0 <= --heads-min <= --heads-max");
  if (a.count < 0) throw UsageError("--count must be non-negative");
  const ImageDims d = parse_dims(a.dims);
  fs::create_directories(a.out);

  // Head counts and scene seeds are drawn up front, so the scenes themselves
  // can be generated in any order.
  std::mt19937_64 rng(a.seed);
  std::vector<std::int64_t> heads(static_cast<std::size_t>(a.count));
  std::vector<std::uint64_t> seeds(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    heads[i] = std::uniform_int_distribution<std::int64_t>(a.heads_min, a.heads_max)(rng);
    seeds[i] = rng();
  }

  std::vector<std::string> errors(heads.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < a.count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      const data::Scene s = data::synth_scene(heads[k], d.h, d.w, seeds[k]);
      const fs::path stem = fs::path(a.out) / scene_id(i, a.count);
      data::save_ppm(stem.string() + ".ppm", s.image);
      data::save_annotations(stem.string() + ".txt", s.points);
      ctf::save(stem.string() + ".density.ctf", data::gaussian_density(s.points, d.h, d.w, a.sigma));
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw InputError(e);
  }
  std::int64_t total = 0;
  for (auto h : heads) total += h;
  std::cerr << "wrote " << a.count << " scenes of " << d.h << "x" << d.w << " (" << total << " heads) to " << a.out
            << '\n';
  return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data_dir;
  std::string config;
  std::string out;
  std::optional<std::int64_t> epochs;
  std::optional<std::int64_t> batch;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> checkpoint_every;
};

int run_train(const TrainArgs& a) {
  train::RunConfig cfg = a.config.empty() ? train::RunConfig{} : train::load_run_config(a.config);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch) cfg.train.batch_size = *a.batch;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.checkpoint_every) cfg.train.checkpoint_every = *a.checkpoint_every;
  try {
    cfg.train.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  const auto dataset = data::load_dataset(a.data_dir);
  fs::create_directories(a.out);
  {
    std::ofstream run(fs::path(a.out) / "run_config.txt");
    run << cfg.model.to_text() << cfg.train.to_text();
  }
  std::ofstream log(fs::path(a.out) / "log.csv");
  log << "epoch,lr,mean_loss,train_mae\n";

  nn::Model model = nn::Model::build(cfg.model, cfg.train.seed);
  std::cerr << "training on " << dataset.size() << " images, " << model.parameter_count() << " parameters, "
            << cfg.train.epochs << " epochs\n";
  train::TrainHooks hooks;
  hooks.checkpoint_dir = fs::path(a.out);
  hooks.on_epoch = [&](const train::EpochRecord& r) {
    log << train::log_csv_row(r) << '\n' << std::flush;
    std::cerr << "epoch " << r.epoch + 1 << "/" << cfg.train.epochs << "  lr " << r.lr << "  loss " << r.mean_loss
              << "  mae " << r.train_mae << '\n';
  };
  train::train_loop(model, dataset, cfg.train, hooks);
  if (!log) throw InputError("failed to write " + (fs::path(a.out) / "log.csv").string());
  std::cerr << "final model in " << (fs::path(a.out) / "final").string() << '\n';
  return 0;
}

// ---- eval / predict ------------------------------------------------------

struct EvalArgs {
  std::string data_dir;
  std::string model;
  std::string out;
  std::string nae = "prediction";
};

int run_eval(const EvalArgs& a) {
  const auto denominator =
      a.nae == "prediction" ? metrics::NaeDenominator::prediction : metrics::NaeDenominator::ground_truth;
  const nn::Model model = nn::load_checkpoint(a.model);
  std::vector<metrics::EvalRow> rows;
  for (const auto& entry : data::list_dataset(a.data_dir)) {
    const Tensor image = data::load_ppm(entry.image);
    const auto points = data::load_annotations(entry.points);
    rows.push_back({entry.id, static_cast<double>(points.size()), train::predict_count(model, image)});
  }
  const metrics::MetricSet m = metrics::compute_metrics(rows, denominator);
  if (a.out.empty()) {
    metrics::write_eval_csv(std::cout, rows, m);
  } else {
    std::ofstream out(a.out);
    metrics::write_eval_csv(out, rows, m);
    if (!out) throw InputError("failed to write " + a.out);
  }
  std::cerr << "images " << m.n << "  MAE " << m.mae << "  MSE " << m.mse << "  NAE " << *m.nae << '\n';
  return 0;
}

struct PredictArgs {
  std::string image;
  std::string model;
  std::string out;
};

int run_predict(const PredictArgs& a) {
  const nn::Model model = nn::load_checkpoint(a.model);
  const Tensor density = train::predict_density(model, data::load_image(a.image));
  if (!a.out.empty()) ctf::save(a.out, density);
  double count = 0.0;
  for (double v : density.to_vector()) count += v;
  std::cout << metrics::format_number(count) << '\n';
  return 0;
}

// ---- profile / bench -----------------------------------------------------

struct ProfileArgs {
  std::string config;
  std::string dims = "512x1024";
  std::string name;
  std::size_t layers = 10;
  bool header = true;
};

int run_profile(const ProfileArgs& a) {
  const ImageDims d = parse_dims(a.dims);
  const nn::Model model = nn::Model::build(model_config_from(a.config), 0);
  const auto report =
      profile::analyze(model, {1, 3, d.h, d.w}, a.name.empty() ? config_name(a.config) : a.name);
  if (a.header) std::cout << profile::csv_header() << '\n';
  std::cout << profile::csv_row(report) << '\n';
  profile::print_summary(std::cerr, report, a.layers);
  return 0;
}

struct BenchArgs {
  std::string config;
  std::string dims = "576x768";
  std::string name;
  int warmup = 20;
  int iters = 100;
  std::uint64_t seed = 0;
  bool header = true;
};

int run_bench(const BenchArgs& a) {
  const ImageDims d = parse_dims(a.dims);
  const nn::Model model = nn::Model::build(model_config_from(a.config), a.seed);
  const Dims input{1, 3, d.h, d.w};
  const auto report = profile::analyze(model, input, a.name.empty() ? config_name(a.config) : a.name);
  profile::BenchOptions opt;
  opt.warmup_iters = a.warmup;
  opt.timed_iters = a.iters;
  opt.seed = a.seed;
  const auto bench = profile::benchmark(model, input, opt);
  if (a.header) std::cout << profile::csv_header() << '\n';
  std::cout << profile::csv_row(report, bench) << '\n';
  std::cerr << d.h << "x" << d.w << ": mean " << bench.mean_ms << " ms, std " << bench.std_ms << " ms, min "
            << bench.min_ms << " ms, " << bench.fps << " FPS over " << bench.timed_iters << " runs (single thread)\n";
  return 0;
}

// ---- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
  double op_tolerance = 1e-4;
  double model_tolerance = 1e-3;
  double model_abs_tolerance = 1e-8;
  std::string dims = "32x32";
  std::size_t samples = 4;
  bool skip_model = false;
};

int run_gradcheck(const GradcheckArgs& a) {
  const ImageDims d = parse_dims(a.dims);
  train::GradientSuiteOptions opt;
  opt.op_tolerance = a.op_tolerance;
  opt.model_tolerance = a.model_tolerance;
  opt.model_abs_tolerance = a.model_abs_tolerance;
  opt.model_input = {1, 3, d.h, d.w};
  opt.model_samples = a.samples;
  opt.include_model = !a.skip_model;
  std::size_t failed = 0;
  const auto results = train::gradient_suite(opt);
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  checked=" << r.checked
              << "  max_rel_error=" << r.max_rel_error << "  max_abs_error=" << r.max_abs_error;
    if (r.within_abs_tolerance > 0) std::cout << "  within_abs_tolerance=" << r.within_abs_tolerance;
    if (!r.passed) std::cout << "  worst: " << r.worst;
    std::cout << '\n';
    failed += r.passed ? 0 : 1;
  }
  std::cerr << results.size() - failed << "/" << results.size() << " gradient checks passed\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Real-time crowd counting: synthesis, training, evaluation, profiling"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  int threads = 0;
  std::string kernel_family = "omp";
  app.add_option("--threads", threads, "OpenMP threads for the conv kernels (default: all)")->check(CLI::NonNegativeNumber);
  app.add_option("--kernels", kernel_family, "Conv kernel family")->check(CLI::IsMember({"omp", "reference"}));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write synthetic scenes: NNNN.ppm, NNNN.txt, NNNN.density.ctf");
  s->add_option("--count", synth.count, "Number of scenes")->required();
  s->add_option("--heads-min", synth.heads_min, "Fewest heads per scene");
  s->add_option("--heads-max", synth.heads_max, "Most heads per scene");
  s->add_option("--dims", synth.dims, "Scene size HxW");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--sigma", synth.sigma, "Density kernel width in grid cells");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; writes checkpoints, log.csv and run_config.txt");
  t->add_option("--data", tr.data_dir, "Dataset directory of NNNN.ppm/NNNN.txt pairs")->required();
  t->add_option("--config", tr.config, "key=value file with model and training keys");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--epochs", tr.epochs, "Override epochs");
  t->add_option("--batch", tr.batch, "Override batch size");
  t->add_option("--seed", tr.seed, "Override seed");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Override checkpoint interval in epochs");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Count every image of a dataset and write the metrics CSV");
  e->add_option("--data", ev.data_dir, "Dataset directory")->required();
  e->add_option("--model", ev.model, "Checkpoint directory")->required();
  e->add_option("--out", ev.out, "CSV file (default: stdout)");
  e->add_option("--nae", ev.nae, "NAE denominator")->check(CLI::IsMember({"prediction", "ground_truth"}));

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict one density map; prints the count");
  p->add_option("--image", pr.image, "PPM image or (3,H,W) CTF tensor")->required();
  p->add_option("--model", pr.model, "Checkpoint directory")->required();
  p->add_option("--out", pr.out, "Density CTF file to write");

  ProfileArgs pf;
  auto* f = app.add_subcommand("profile", "Parameter and MAC counts as a CSV row");
  f->add_option("--config", pf.config, "Model config file (default architecture if omitted)");
  f->add_option("--dims", pf.dims, "Input size HxW");
  f->add_option("--name", pf.name, "config_name column");
  f->add_option("--layers", pf.layers, "Most expensive layers listed on stderr");
  f->add_flag("!--no-header", pf.header, "Omit the CSV header");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Single-threaded latency benchmark as a CSV row");
  b->add_option("--config", bn.config, "Model config file (default architecture if omitted)");
  b->add_option("--dims", bn.dims, "Input size HxW");
  b->add_option("--name", bn.name, "config_name column");
  b->add_option("--warmup", bn.warmup, "Untimed warm-up runs")->check(CLI::NonNegativeNumber);
  b->add_option("--iters", bn.iters, "Timed runs")->check(CLI::PositiveNumber);
  b->add_option("--seed", bn.seed, "Weight and input seed");
  b->add_flag("!--no-header", bn.header, "Omit the CSV header");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "64-bit finite-difference checks; exit 0 iff all pass");
  g->add_option("--op-tolerance", gc.op_tolerance, "Relative tolerance for single ops");
  g->add_option("--model-tolerance", gc.model_tolerance, "Relative tolerance for the full model");
  g->add_option("--model-abs-tolerance", gc.model_abs_tolerance, "Absolute error accepted for tiny model gradients");
  g->add_option("--dims", gc.dims, "Model input size HxW");
  g->add_option("--samples", gc.samples, "Elements checked per parameter tensor");
  g->add_flag("--skip-model", gc.skip_model, "Only check single ops and the loss");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    kernels::set_backend(kernel_family == "reference" ? kernels::Backend::reference : kernels::Backend::omp);
    if (threads > 0) kernels::omp::set_threads(threads);
    if (active == s) return run_synth(synth);
    if (active == t) return run_train(tr);
    if (active == e) return run_eval(ev);
    if (active == p) return run_predict(pr);
    if (active == f) return run_profile(pf);
    if (active == b) return run_bench(bn);
    return run_gradcheck(gc);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n\n" << active->help();
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
}
