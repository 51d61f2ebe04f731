#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rtcc/data/data.hpp"
#include "rtcc/nn/config.hpp"
#include "rtcc/nn/model.hpp"

namespace rtcc::train {

struct TrainConfig {
  double lr_init = 1e-4;
  double lr_min = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  std::int64_t batch_size = 16;
  std::int64_t epochs = 300;
  double flip_prob = 0.5;
  std::int64_t crop_h = 0;  // 0 trains on full images
  std::int64_t crop_w = 0;
  double sigma = data::kDefaultSigma;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // epochs; 0 saves only the final model

  // Throws ConfigError listing every violated invariant.
  void validate() const;
  std::string to_text() const;
  // Returns false if the key is not a TrainConfig field.
  bool apply(const KeyValue& kv);
  bool operator==(const TrainConfig&) const = default;
};

// A training run's configuration file may mix model and training keys.
struct RunConfig {
  nn::ModelConfig model;
  TrainConfig train;
};
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Mean over the batch of the squared L2 distance between density maps,
// sum_j ||pred_j - gt_j||^2 / N for (N,...) inputs. Differentiable in both.
Tensor mse_loss(const Tensor& pred, const Tensor& gt);

struct OptimizerState {
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments
  std::int64_t t = 0;
};

// One bias-corrected Adam step over `params` using their accumulated grads.
// Weight decay is decoupled: p <- p - lr*wd*p, then the Adam delta.
// Throws UsageError when a parameter has no grad or the state does not fit.
void adam_step(std::span<const nn::NamedTensor> params, OptimizerState& state, double lr, const TrainConfig& config);

// lr_min + (lr_init - lr_min) * (1 + cos(pi * epoch / (epochs - 1))) / 2;
// a single-epoch run stays at lr_init. UsageError outside [0, epochs).
double cosine_lr(std::int64_t epoch, const TrainConfig& config);

struct EpochRecord {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double train_mae = 0.0;  // |predicted - true| count over the epoch's augmented samples
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Checkpoints go to <dir>/epoch_NNNN every checkpoint_every epochs and to
  // <dir>/final at the end.
  std::optional<std::filesystem::path> checkpoint_dir;
};

// Every epoch: shuffle by (seed, epoch), flip/crop augmentation, per-image
// normalization, forward, loss, backward, Adam with the epoch's cosine lr.
// Images must share dims unless a crop is configured.
TrainLog train_loop(nn::Model& model, const std::vector<data::LabeledImage>& dataset, const TrainConfig& config,
                    const TrainHooks& hooks = {});

// Header "epoch,lr,mean_loss,train_mae" plus one row per record.
void write_log_csv(std::ostream& out, const std::vector<EpochRecord>& records);
std::string log_csv_row(const EpochRecord& record);

// Predicted count of one (3,H,W) image: normalize, forward, sum.
double predict_count(const nn::Model& model, const Tensor& image);
// The full (1,1,H/4,W/4) density prediction.
Tensor predict_density(const nn::Model& model, const Tensor& image);

struct GradientSuiteOptions {
  double op_tolerance = 1e-4;
  double model_tolerance = 1e-3;
  // Measured gradients of the default model have median magnitude ~0.05 and
  // central-difference noise ~1e-9, so this bound only settles components
  // too small to resolve relatively.
  double model_abs_tolerance = 1e-8;
  Dims model_input{1, 3, 32, 32};
  // Elements sampled per parameter tensor in the model check, plus one
  // directional derivative each.
  std::size_t model_samples = 4;
  bool include_model = true;
};

// Every differentiable op, the loss, and the full default model, all in
// 64-bit central finite differences.
std::vector<gradcheck::Result> gradient_suite(const GradientSuiteOptions& options = {});

}  // namespace rtcc::train
