#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "rtcc/error.hpp"
#include "rtcc/tensor/ctf.hpp"
#include "rtcc/tensor/gradcheck.hpp"
#include "rtcc/tensor/ops.hpp"
#include "rtcc/train/train.hpp"

using namespace rtcc;
using namespace rtcc::train;

namespace {

nn::NamedTensor scalar_param(double value, DType dtype = DType::f64) {
  Tensor t = Tensor::full({1}, value, dtype);
  t.set_requires_grad(true);
  return {"p", t};
}

void set_grad(const Tensor& p, double g) {
  // d/dp of g*p is g.
  ops::sum(ops::mul(p, Tensor::full(p.dims(), g, p.dtype()))).backward();
}

std::vector<data::LabeledImage> tiny_dataset(int n, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  std::vector<data::LabeledImage> out;
  for (int i = 0; i < n; ++i) {
    const auto s = data::synth_scene(2 + i, h, w, seed + static_cast<std::uint64_t>(i));
    out.push_back({std::to_string(i), s.image, s.points});
  }
  return out;
}

std::vector<std::vector<double>> parameter_values(const nn::Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.to_vector());
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.lr_init = 1e-3;
  c.batch_size = 2;
  c.epochs = 3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("mse_loss examples") {
  const Tensor a = gradcheck::random_tensor({2, 1, 4, 4}, 1);
  CHECK(mse_loss(a, a.clone()).item() == 0.0);

  const Tensor p1 = Tensor::from_values({1, 1, 1, 2}, std::vector<double>{1, 2}, DType::f64);
  CHECK(mse_loss(p1, Tensor::zeros({1, 1, 1, 2}, DType::f64)).item() == 5.0);

  // Squared norms 5 (1^2 + 2^2) and 3 (1 + 1 + 1) -> mean 4.
  const Tensor p2 = Tensor::from_values({2, 1, 1, 3}, std::vector<double>{1, 2, 0, 1, 1, 1}, DType::f64);
  CHECK(mse_loss(p2, Tensor::zeros({2, 1, 1, 3}, DType::f64)).item() == 4.0);

  CHECK_THROWS_AS(mse_loss(p1, Tensor::zeros({1, 1, 2, 1}, DType::f64)), ShapeError);

  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor x = gradcheck::random_tensor({3, 1, 5, 4}, s);
    const Tensor y = gradcheck::random_tensor({3, 1, 5, 4}, s + 100);
    const auto xv = x.to_vector(), yv = y.to_vector();
    double direct = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) direct += (xv[i] - yv[i]) * (xv[i] - yv[i]);
    CHECK(mse_loss(x, y).item() == doctest::Approx(direct / 3).epsilon(1e-13));
    CHECK(mse_loss(x, y).item() >= 0.0);
  }
}

TEST_CASE("mse_loss gradients") {
  const auto r = gradcheck::check(
      "mse_loss", [](std::span<const Tensor> in) { return mse_loss(in[0], in[1]); },
      {gradcheck::random_tensor({2, 1, 3, 4}, 1), gradcheck::random_tensor({2, 1, 3, 4}, 2)});
  CHECK_MESSAGE(r.passed, r.worst);
  CHECK(r.checked == 48);
}

TEST_CASE("adam worked examples") {
  TrainConfig c;
  c.weight_decay = 0.0;
  {
    const auto p = scalar_param(0.5);
    set_grad(p.tensor, 1.0);
    OptimizerState st;
    adam_step(std::span(&p, 1), st, 1e-3, c);
    CHECK(p.tensor.item() - 0.5 == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-12));
    CHECK(st.t == 1);
  }
  {
    const auto p = scalar_param(0.5);
    set_grad(p.tensor, 0.0);
    OptimizerState st;
    adam_step(std::span(&p, 1), st, 1e-3, c);
    CHECK(p.tensor.item() == 0.5);
  }
  {
    TrainConfig wd = c;
    wd.weight_decay = 0.1;
    const auto p = scalar_param(0.5);
    set_grad(p.tensor, 0.0);
    OptimizerState st;
    adam_step(std::span(&p, 1), st, 1e-2, wd);
    CHECK(p.tensor.item() == doctest::Approx(0.5 * (1 - 1e-2 * 0.1)).epsilon(1e-15));
  }
  {
    const auto p = scalar_param(0.5);
    OptimizerState st;
    CHECK_THROWS_WITH_AS(adam_step(std::span(&p, 1), st, 1e-3, c), doctest::Contains("p has no gradient"),
                         UsageError);
  }
}

TEST_CASE("adam matches a textbook transcription over many steps") {
  TrainConfig c;
  c.weight_decay = 0.01;
  c.beta1 = 0.8;
  c.beta2 = 0.95;
  Tensor w = gradcheck::random_tensor({7}, 3);
  w.set_requires_grad(true);
  const nn::NamedTensor p{"w", w};
  std::vector<double> ref = w.to_vector(), m(7, 0.0), v(7, 0.0);
  OptimizerState st;
  for (int t = 1; t <= 25; ++t) {
    // Objective sum((w - 1)^2 * k) with per-element weights.
    const Tensor k = Tensor::from_values({7}, std::vector<double>{1, 2, 3, 4, 5, 6, 7}, DType::f64);
    const Tensor d = ops::add(w, Tensor::full({7}, -1.0, DType::f64));
    ops::sum(ops::mul(ops::mul(d, d), k)).backward();
    const double lr = 0.01 / t;
    adam_step(std::span(&p, 1), st, lr, c);
    w.zero_grad();
    for (std::size_t i = 0; i < 7; ++i) {
      const double g = 2.0 * (ref[i] - 1.0) * static_cast<double>(i + 1);
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * g * g;
      const double mh = m[i] / (1 - std::pow(c.beta1, t));
      const double vh = v[i] / (1 - std::pow(c.beta2, t));
      ref[i] = ref[i] - lr * c.weight_decay * ref[i];
      ref[i] -= lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
  const auto got = w.to_vector();
  for (std::size_t i = 0; i < 7; ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("adam descends a quadratic") {
  TrainConfig c;
  for (double start : {-4.0, -0.3, 0.2, 7.0}) {
    const auto p = scalar_param(start);
    auto objective = [&] { return (p.tensor.item() - 1.5) * (p.tensor.item() - 1.5); };
    const double before = objective();
    set_grad(p.tensor, 2 * (start - 1.5));
    OptimizerState st;
    adam_step(std::span(&p, 1), st, 1e-3, c);
    CHECK(objective() < before);
  }
}

TEST_CASE("cosine schedule") {
  TrainConfig c;
  c.epochs = 301;
  CHECK(cosine_lr(0, c) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(cosine_lr(300, c) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(cosine_lr(150, c) == doctest::Approx(5.05e-5).epsilon(1e-12));
  for (std::int64_t e = 1; e < c.epochs; ++e) REQUIRE(cosine_lr(e, c) <= cosine_lr(e - 1, c));
  CHECK_THROWS_AS(cosine_lr(-1, c), UsageError);
  CHECK_THROWS_AS(cosine_lr(301, c), UsageError);
  c.epochs = 1;
  CHECK(cosine_lr(0, c) == 1e-4);
}

TEST_CASE("train config parsing") {
  TrainConfig d;
  CHECK(d.lr_init == 1e-4);
  CHECK(d.lr_min == 1e-6);
  CHECK(d.beta1 == 0.9);
  CHECK(d.beta2 == 0.999);
  CHECK(d.eps == 1e-8);
  CHECK(d.weight_decay == 5e-4);
  CHECK(d.batch_size == 16);
  CHECK(d.epochs == 300);
  CHECK(d.flip_prob == 0.5);
  d.validate();

  const RunConfig rc = parse_run_config("# desk run\nlr_init=0.003\nbatch_size=8\nepochs=2\nstage_repeats=2,4\n"
                                        "output_scale=0.01\ncrop_h=64\ncrop_w=96\nseed=42\n");
  CHECK(rc.train.lr_init == 0.003);
  CHECK(rc.train.batch_size == 8);
  CHECK(rc.train.crop_w == 96);
  CHECK(rc.train.seed == 42);
  CHECK(rc.model.stage_repeats[1] == 4);
  CHECK(rc.model.output_scale == 0.01);

  TrainConfig tweaked = rc.train;
  tweaked.lr_min = 1.0 / 3e6;
  CHECK(parse_run_config(tweaked.to_text()).train == tweaked);

  CHECK_THROWS_WITH_AS(parse_run_config("lr=1\n"), doctest::Contains("unknown config key 'lr'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("epochs=x\n"), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("lr_min=1\nlr_init=0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("beta2=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("crop_h=40\ncrop_w=64\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("crop_h=64\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("batch_size=0\n"), ConfigError);
}

TEST_CASE("zero epochs change nothing") {
  auto model = nn::Model::build({}, 1);
  const auto before = parameter_values(model);
  TrainConfig c = small_config();
  c.epochs = 0;
  const TrainLog log = train_loop(model, tiny_dataset(2, 32, 32, 1), c);
  CHECK(log.epochs.empty());
  CHECK(log.step_losses.empty());
  CHECK(parameter_values(model) == before);
}

TEST_CASE("training is deterministic and logs every epoch") {
  const auto ds = tiny_dataset(3, 32, 48, 10);
  auto run = [&](std::uint64_t seed) {
    auto model = nn::Model::build({}, 2);
    TrainConfig c = small_config();
    c.seed = seed;
    std::vector<EpochRecord> seen;
    const TrainLog log = train_loop(model, ds, c, {[&](const EpochRecord& r) { seen.push_back(r); }, std::nullopt});
    CHECK(seen.size() == log.epochs.size());
    return std::pair{log, parameter_values(model)};
  };
  const auto [log_a, params_a] = run(5);
  const auto [log_b, params_b] = run(5);
  const auto [log_c, params_c] = run(6);
  REQUIRE(log_a.epochs.size() == 3);
  CHECK(log_a.step_losses.size() == 6);  // ceil(3 / 2) steps per epoch
  CHECK(log_a.step_losses == log_b.step_losses);
  CHECK(params_a == params_b);
  CHECK(params_a != params_c);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(log_a.epochs[e].epoch == static_cast<std::int64_t>(e));
    CHECK(log_a.epochs[e].lr == cosine_lr(static_cast<std::int64_t>(e), small_config()));
    CHECK(log_a.epochs[e].mean_loss ==
          doctest::Approx((log_a.step_losses[2 * e] + log_a.step_losses[2 * e + 1]) / 2).epsilon(1e-15));
    CHECK(log_a.epochs[e].train_mae >= 0.0);
  }

  std::ostringstream os;
  write_log_csv(os, log_a.epochs);
  const std::string csv = os.str();
  CHECK(csv.starts_with("epoch,lr,mean_loss,train_mae\n0,0.001,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("a few steps reduce the loss") {
  nn::ModelConfig mc;
  mc.output_scale = 0.01;
  auto model = nn::Model::build(mc, 3);
  TrainConfig c = small_config();
  c.lr_init = 3e-3;
  c.batch_size = 4;
  c.epochs = 15;
  c.flip_prob = 0.0;
  const TrainLog log = train_loop(model, tiny_dataset(4, 32, 32, 20), c);
  CHECK(log.step_losses.back() < 0.5 * log.step_losses.front());
}

TEST_CASE("mixed image sizes need a crop") {
  auto ds = tiny_dataset(2, 32, 32, 30);
  const auto big = data::synth_scene(3, 64, 48, 31);
  ds.push_back({"big", big.image, big.points});
  auto model = nn::Model::build({}, 4);
  TrainConfig c = small_config();
  c.epochs = 1;
  CHECK_THROWS_WITH_AS(train_loop(model, ds, c), doctest::Contains("big"), InputError);
  c.crop_h = 32;
  c.crop_w = 32;
  const TrainLog log = train_loop(model, ds, c);
  CHECK(log.step_losses.size() == 2);
  CHECK_THROWS_AS(train_loop(model, {}, c), InputError);
}

TEST_CASE("checkpoints during and after training") {
  const auto dir = std::filesystem::temp_directory_path() / "rtcc_test_train_ckpt";
  std::filesystem::remove_all(dir);
  nn::ModelConfig mc;
  mc.output_scale = 0.25;
  auto model = nn::Model::build(mc, 5);
  TrainConfig c = small_config();
  c.epochs = 4;
  c.checkpoint_every = 2;
  train_loop(model, tiny_dataset(2, 32, 32, 40), c, {{}, dir});
  CHECK(std::filesystem::exists(dir / "epoch_0002" / "manifest.txt"));
  CHECK(std::filesystem::exists(dir / "epoch_0004" / "manifest.txt"));
  CHECK_FALSE(std::filesystem::exists(dir / "epoch_0001"));
  const nn::Model back = nn::load_checkpoint(dir / "final");
  CHECK(back.config() == mc);
  CHECK(parameter_values(back) == parameter_values(model));
  CHECK(parameter_values(nn::load_checkpoint(dir / "epoch_0004")) == parameter_values(model));
  CHECK(parameter_values(nn::load_checkpoint(dir / "epoch_0002")) != parameter_values(model));

  const auto scene = data::synth_scene(4, 32, 32, 41);
  CHECK(predict_count(back, scene.image) == doctest::Approx(predict_count(model, scene.image)).epsilon(1e-12));
  CHECK(predict_density(back, scene.image).dims() == Dims{1, 1, 8, 8});
  CHECK_THROWS_AS(predict_count(back, Tensor::zeros({1, 32, 32})), ShapeError);
  std::filesystem::remove_all(dir);
}
