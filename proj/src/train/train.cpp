#include "rtcc/train/train.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "rtcc/error.hpp"
#include "rtcc/metrics/metrics.hpp"
#include "rtcc/tensor/ops.hpp"

namespace rtcc::train {

namespace {

[[noreturn]] void bad_value(const KeyValue& kv, std::string_view expected) {
  throw ConfigError("line " + std::to_string(kv.line) + ": invalid value '" + kv.value + "' for " + kv.key +
                    " (expected " + std::string(expected) + ")");
}

template <typename T>
T parse_number(const KeyValue& kv) {
  T v{};
  const auto& s = kv.value;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(kv, "a number");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) bad_value(kv, "a finite number");
  }
  return v;
}

std::string checkpoint_name(std::int64_t epoch) {
  std::string digits = std::to_string(epoch);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "epoch_" + digits;
}

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(lr_min > 0.0 && lr_min <= lr_init)) problems.push_back("need 0 < lr_min <= lr_init");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) problems.push_back("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) problems.push_back("eps must be positive");
  if (!(weight_decay >= 0.0)) problems.push_back("weight_decay must be non-negative");
  if (batch_size < 1) problems.push_back("batch_size must be at least 1");
  if (epochs < 0) problems.push_back("epochs must be non-negative");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) problems.push_back("flip_prob must lie in [0, 1]");
  if (crop_h < 0 || crop_w < 0 || crop_h % 16 != 0 || crop_w % 16 != 0 || (crop_h == 0) != (crop_w == 0)) {
    problems.push_back("crop_h and crop_w must both be 0 or both positive multiples of 16");
  }
  if (!(sigma > 0.0)) problems.push_back("sigma must be positive");
  if (checkpoint_every < 0) problems.push_back("checkpoint_every must be non-negative");
  if (problems.empty()) return;
  std::string msg = "invalid train config:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "lr_init=" << lr_init << "\nlr_min=" << lr_min << "\nbeta1=" << beta1 << "\nbeta2=" << beta2
     << "\neps=" << eps << "\nweight_decay=" << weight_decay << "\nbatch_size=" << batch_size
     << "\nepochs=" << epochs << "\nflip_prob=" << flip_prob << "\ncrop_h=" << crop_h << "\ncrop_w=" << crop_w
     << "\nsigma=" << sigma << "\nseed=" << seed << "\ncheckpoint_every=" << checkpoint_every << '\n';
  return os.str();
}

bool TrainConfig::apply(const KeyValue& kv) {
  const auto& k = kv.key;
  if (k == "lr_init") lr_init = parse_number<double>(kv);
  else if (k == "lr_min") lr_min = parse_number<double>(kv);
  else if (k == "beta1") beta1 = parse_number<double>(kv);
  else if (k == "beta2") beta2 = parse_number<double>(kv);
  else if (k == "eps") eps = parse_number<double>(kv);
  else if (k == "weight_decay") weight_decay = parse_number<double>(kv);
  else if (k == "batch_size") batch_size = parse_number<std::int64_t>(kv);
  else if (k == "epochs") epochs = parse_number<std::int64_t>(kv);
  else if (k == "flip_prob") flip_prob = parse_number<double>(kv);
  else if (k == "crop_h") crop_h = parse_number<std::int64_t>(kv);
  else if (k == "crop_w") crop_w = parse_number<std::int64_t>(kv);
  else if (k == "sigma") sigma = parse_number<double>(kv);
  else if (k == "seed") seed = parse_number<std::uint64_t>(kv);
  else if (k == "checkpoint_every") checkpoint_every = parse_number<std::int64_t>(kv);
  else return false;
  return true;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  for (const auto& kv : parse_key_values(text)) {
    if (!cfg.train.apply(kv) && !cfg.model.apply(kv)) {
      throw ConfigError("line " + std::to_string(kv.line) + ": unknown config key '" + kv.key + "'");
    }
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return parse_run_config(read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Tensor mse_loss(const Tensor& pred, const Tensor& gt) {
  if (!pred.defined() || !gt.defined() || pred.is_meta() || gt.is_meta()) {
    throw UsageError("mse_loss needs two materialized tensors");
  }
  if (pred.dims() != gt.dims() || pred.rank() < 1 || pred.dim(0) < 1) {
    throw ShapeError("mse_loss: prediction " + rtcc::to_string(pred.dims()) + " vs target " +
                     rtcc::to_string(gt.dims()));
  }
  if (pred.dtype() != gt.dtype()) throw ShapeError("mse_loss: prediction and target dtypes differ");
  const double inv_n = 1.0 / static_cast<double>(pred.dim(0));
  Tensor out = Tensor::zeros({}, pred.dtype());
  dispatch(pred.dtype(), [&]<typename T>() {
    auto p = pred.data<T>();
    auto g = gt.data<T>();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(g[i]);
      acc += d * d;
    }
    out.mutable_data<T>()[0] = static_cast<T>(acc * inv_n);
  });
  autograd::record(out, {pred, gt}, [p = pred.detach(), g = gt.detach(), inv_n](const Tensor& grad) {
    Tensor dp = Tensor::zeros(p.dims(), p.dtype());
    Tensor dg = Tensor::zeros(p.dims(), p.dtype());
    dispatch(p.dtype(), [&]<typename T>() {
      const double scale = 2.0 * inv_n * grad.item();
      auto pv = p.data<T>();
      auto gv = g.data<T>();
      auto a = dp.mutable_data<T>();
      auto b = dg.mutable_data<T>();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const double d = scale * (static_cast<double>(pv[i]) - static_cast<double>(gv[i]));
        a[i] = static_cast<T>(d);
        b[i] = static_cast<T>(-d);
      }
    });
    return std::vector<Tensor>{dp, dg};
  });
  return out;
}

void adam_step(std::span<const nn::NamedTensor> params, OptimizerState& state, double lr, const TrainConfig& config) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.tensor.dims(), p.tensor.dtype()));
      state.v.push_back(Tensor::zeros(p.tensor.dims(), p.tensor.dtype()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw UsageError("adam_step: optimizer state holds " + std::to_string(state.m.size()) + " moments for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.tensor.grad().defined()) throw UsageError("adam_step: parameter " + p.name + " has no gradient");
    if (state.m[i].dims() != p.tensor.dims() || state.v[i].dims() != p.tensor.dims()) {
      throw UsageError("adam_step: moment dims do not match parameter " + p.name);
    }
  }

  ++state.t;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor param = params[i].tensor;
    const Tensor grad = param.grad();
    dispatch(param.dtype(), [&]<typename T>() {
      auto w = param.mutable_data<T>();
      auto g = grad.data<T>();
      auto m = state.m[i].mutable_data<T>();
      auto v = state.v[i].mutable_data<T>();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j];
        const double mj = b1 * m[j] + (1.0 - b1) * gj;
        const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double shrunk = static_cast<double>(w[j]) * decay;
        w[j] = static_cast<T>(shrunk - lr * (mj / c1) / (std::sqrt(vj / c2) + config.eps));
      }
    });
  }
}

double cosine_lr(std::int64_t epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw UsageError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) +
                     ")");
  }
  if (config.epochs == 1) return config.lr_init;
  const double phase = M_PI * static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
  return config.lr_min + 0.5 * (config.lr_init - config.lr_min) * (1.0 + std::cos(phase));
}

TrainLog train_loop(nn::Model& model, const std::vector<data::LabeledImage>& dataset, const TrainConfig& config,
                    const TrainHooks& hooks) {
  config.validate();
  TrainLog log;
  if (config.epochs == 0) return log;
  if (dataset.empty()) throw InputError("train_loop: empty dataset");

  const bool cropping = config.crop_h > 0;
  std::vector<Tensor> densities;
  for (const auto& item : dataset) {
    if (!cropping && item.image.dims() != dataset.front().image.dims()) {
      throw InputError("train_loop: image " + item.id + " has dims " + rtcc::to_string(item.image.dims()) +
                       ", expected " + rtcc::to_string(dataset.front().image.dims()) + " (set a crop to mix sizes)");
    }
    densities.push_back(data::gaussian_density(item.points, item.image.dim(1), item.image.dim(2), config.sigma,
                                               data::kCellScale, model.dtype()));
  }

  data::AugmentOptions augment;
  augment.flip_prob = config.flip_prob;
  augment.crop_h = config.crop_h;
  augment.crop_w = config.crop_w;
  std::seed_seq flip_seq{config.seed, std::uint64_t{1}};
  std::seed_seq crop_seq{config.seed, std::uint64_t{2}};
  std::mt19937_64 flip_rng(flip_seq), crop_rng(crop_seq);

  OptimizerState state;
  const auto& params = model.parameters();
  for (auto p : params) p.tensor.zero_grad();
  const auto n = static_cast<std::int64_t>(dataset.size());
  std::vector<std::size_t> order(dataset.size());

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq shuffle_seq{config.seed, std::uint64_t{3}, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 shuffle_rng(shuffle_seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const double lr = cosine_lr(epoch, config);
    double loss_sum = 0.0, abs_err_sum = 0.0;
    std::int64_t steps = 0;
    for (std::int64_t begin = 0; begin < n; begin += config.batch_size) {
      const std::int64_t end = std::min(n, begin + config.batch_size);
      std::vector<Tensor> images, maps;
      for (std::int64_t k = begin; k < end; ++k) {
        const auto idx = order[static_cast<std::size_t>(k)];
        data::Sample s = data::augment(dataset[idx].image.to(model.dtype()), densities[idx], augment, flip_rng, crop_rng);
        images.push_back(data::normalize(s.image));
        maps.push_back(s.density);
      }
      const auto batch = static_cast<std::int64_t>(images.size());
      const Tensor x = ops::stack(images);
      Tensor target = ops::stack(maps);
      target = target.reshape({batch, 1, target.dim(3), target.dim(4)});

      const Tensor pred = model.forward(x);
      const Tensor loss = mse_loss(pred, target);
      loss.backward();
      adam_step(params, state, lr, config);
      for (auto p : params) p.tensor.zero_grad();

      const double l = loss.item();
      log.step_losses.push_back(l);
      loss_sum += l;
      ++steps;
      const auto pv = pred.to_vector(), tv = target.to_vector();
      const std::size_t per = pv.size() / static_cast<std::size_t>(batch);
      for (std::size_t b = 0; b < static_cast<std::size_t>(batch); ++b) {
        const auto first = static_cast<std::ptrdiff_t>(b * per), last = static_cast<std::ptrdiff_t>((b + 1) * per);
        abs_err_sum += std::abs(std::accumulate(pv.begin() + first, pv.begin() + last, 0.0) -
                                std::accumulate(tv.begin() + first, tv.begin() + last, 0.0));
      }
    }

    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(steps), abs_err_sum / static_cast<double>(n)};
    log.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (hooks.checkpoint_dir && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      nn::save_checkpoint(model, *hooks.checkpoint_dir / checkpoint_name(epoch + 1));
    }
  }
  if (hooks.checkpoint_dir) nn::save_checkpoint(model, *hooks.checkpoint_dir / "final");
  return log;
}

std::string log_csv_row(const EpochRecord& r) {
  using metrics::format_number;
  return std::to_string(r.epoch) + ',' + format_number(r.lr) + ',' + format_number(r.mean_loss) + ',' +
         format_number(r.train_mae);
}

void write_log_csv(std::ostream& out, const std::vector<EpochRecord>& records) {
  out << "epoch,lr,mean_loss,train_mae\n";
  for (const auto& r : records) out << log_csv_row(r) << '\n';
}

Tensor predict_density(const nn::Model& model, const Tensor& image) {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("predict expects a (3,H,W) image, got " + rtcc::to_string(image.dims()));
  }
  autograd::NoGradGuard no_grad;
  const Tensor x = data::normalize(image.to(model.dtype()));
  return model.forward(x.reshape({1, 3, x.dim(1), x.dim(2)}));
}

double predict_count(const nn::Model& model, const Tensor& image) {
  const auto v = predict_density(model, image).to_vector();
  return std::accumulate(v.begin(), v.end(), 0.0);
}

std::vector<gradcheck::Result> gradient_suite(const GradientSuiteOptions& options) {
  gradcheck::Options op;
  op.tolerance = options.op_tolerance;
  std::vector<gradcheck::Result> results = gradcheck::op_suite(op);
  results.push_back(gradcheck::check(
      "mse_loss", [](std::span<const Tensor> in) { return mse_loss(in[0], in[1]); },
      {gradcheck::random_tensor({2, 1, 3, 4}, 11), gradcheck::random_tensor({2, 1, 3, 4}, 12)}, op));
  if (options.include_model) {
    gradcheck::Options whole;
    whole.tolerance = options.model_tolerance;
    whole.abs_tolerance = options.model_abs_tolerance;
    whole.max_elements = options.model_samples;
    whole.directional = true;
    results.push_back(nn::check_model_gradients(nn::ModelConfig{}, options.model_input, whole));
  }
  return results;
}

}  // namespace rtcc::train
