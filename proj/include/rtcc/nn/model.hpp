#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "rtcc/nn/blocks.hpp"
#include "rtcc/nn/config.hpp"
#include "rtcc/tensor/gradcheck.hpp"

namespace rtcc::nn {

// The stem / encoder / FPN decoder crowd-counting network.
//
// Copies of a Model share parameter storage. A built model is read-only
// during forward passes and may serve several threads at once; training
// mutates parameters in place from a single thread.
class Model {
 public:
  // Throws ConfigError when `config` violates its invariants.
  static Model build(const ModelConfig& config, std::uint64_t seed, DType dtype = DType::f32);

  const ModelConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }

  const std::vector<NamedTensor>& parameters() const { return store_.items(); }
  Tensor parameter(std::string_view name) const { return store_.find(name); }
  std::int64_t parameter_count() const { return store_.count(); }

  // image (N,3,H,W) with H and W divisible by 16 -> density (N,1,H/4,W/4).
  Tensor forward(const Tensor& image) const;

  Tensor stem_forward(const Tensor& image) const;
  // Requires a mode with an encoder.
  BranchSet encoder_forward(const Tensor& stem_out) const;
  // Requires full/ccw_only/mlf_only (three branches).
  Tensor decoder_forward(const BranchSet& branches) const;

  const Stem& stem() const { return stem_; }
  const std::optional<Encoder>& encoder() const { return encoder_; }

 private:
  Model() = default;

  ModelConfig config_;
  DType dtype_ = DType::f32;
  ParameterStore store_;
  Stem stem_;
  std::optional<Encoder> encoder_;
  std::optional<Fpn> fpn_;
  std::optional<Head> head_;
};

// Receptive field (in input pixels) of one stem output after its three convs,
// from r <- r + (k - 1) * d * jump, jump <- jump * s.
std::int64_t stem_receptive_field(KernelVariant variant);

// Checkpoint directory: manifest.txt ("name=relative-path" per parameter in
// registry order), config.txt (ModelConfig key=value) and one CTF per tensor.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

// Finite-difference check of a random projection of forward(x) with respect
// to x and every parameter of a 64-bit model built from (config, seed).
// Biases are drawn from N(0, 0.1^2) first: with zero biases many ReLU inputs
// sit exactly on the kink, where central differences are meaningless.
gradcheck::Result check_model_gradients(const ModelConfig& config, const Dims& input_dims,
                                        const gradcheck::Options& options, std::uint64_t seed = 21);

}  // namespace rtcc::nn
