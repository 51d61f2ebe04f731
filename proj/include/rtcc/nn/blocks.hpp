#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtcc/nn/config.hpp"
#include "rtcc/tensor/kernels.hpp"
#include "rtcc/tensor/tensor.hpp"

namespace rtcc::nn {

// Branch i holds features at input/2^(i+2) resolution.
using BranchSet = std::vector<Tensor>;

// 1 to 3 rank-4 branches, each exactly half the spatial size of the previous.
void validate_branches(const BranchSet& branches);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Insertion-ordered parameter registry with unique names.
class ParameterStore {
 public:
  Tensor add(std::string name, Tensor tensor);
  const std::vector<NamedTensor>& items() const { return items_; }
  // Throws UsageError for unknown names.
  Tensor find(std::string_view name) const;
  std::int64_t count() const;

 private:
  std::vector<NamedTensor> items_;
};

struct Conv {
  std::string name;
  ConvSpec spec;
  Tensor weight;
  Tensor bias;

  Tensor operator()(const Tensor& x) const;
};

// Creates He-normal initialized convolutions (requiring grad) in a fixed order from one RNG
// stream, so a (config, seed) pair always yields the same parameters.
class LayerBuilder {
 public:
  LayerBuilder(ParameterStore& store, std::uint64_t seed, DType dtype);

  Conv conv(const std::string& name, const ConvSpec& spec);

 private:
  ParameterStore& store_;
  std::mt19937_64 rng_;
  DType dtype_;
};

// Split; identity half; other half 1x1 + ReLU, 3x3 depthwise, 1x1 + ReLU;
// concat; shuffle with two groups.
struct ShuffleBlock {
  Conv expand, depthwise, project;

  static ShuffleBlock build(LayerBuilder& b, const std::string& prefix, std::int64_t channels);
  Tensor forward(const Tensor& x) const;
};

struct Stem {
  Conv conv1, conv2, conv3;
  ShuffleBlock shuffle1, shuffle2;

  static Stem build(LayerBuilder& b, const ModelConfig& cfg);
  // Three convolutions with ReLU, before the shuffle blocks.
  Tensor convs_forward(const Tensor& image) const;
  Tensor forward(const Tensor& image) const;
};

// 3x3 depthwise stride-2 followed by a 1x1 channel map.
struct DownUnit {
  Conv depthwise, pointwise;
  Tensor forward(const Tensor& x) const;
};

// Chain of stride-2 units from one branch to a lower-resolution one, with
// ReLU between units. Intermediate units keep the source channel count.
struct DownPath {
  std::vector<DownUnit> units;

  static DownPath build(LayerBuilder& b, const std::string& prefix, std::int64_t from_channels,
                        std::int64_t to_channels, std::int64_t steps);
  Tensor forward(const Tensor& x) const;
};

// Conditional channel weighting over all branches.
struct CcwBlock {
  std::string name;
  Conv cross_reduce, cross_expand;
  std::vector<Conv> depthwise, spatial_reduce, spatial_expand;

  static CcwBlock build(LayerBuilder& b, const std::string& prefix, std::span<const std::int64_t> channels,
                        std::int64_t reduction);
  BranchSet forward(const BranchSet& branches) const;
};

// Downward-only fusion: out_j = ReLU(x_j + sum_{i<j} path_ij(x_i)). With
// add_branch, a new lowest-resolution branch is produced from all inputs.
struct MlfBlock {
  std::string name;
  std::size_t inputs = 0;
  bool add_branch = false;
  std::vector<std::vector<DownPath>> paths;  // paths[j][i], i < j

  static MlfBlock build(LayerBuilder& b, const std::string& prefix, std::span<const std::int64_t> channels,
                        std::size_t inputs, bool add_branch);
  BranchSet forward(const BranchSet& branches) const;
};

// Appends branch k = ReLU(sum_i path_ik(x_i)), leaving existing branches as is.
struct Transition {
  std::string name;
  std::vector<DownPath> paths;

  static Transition build(LayerBuilder& b, const std::string& prefix, std::span<const std::int64_t> channels,
                          std::size_t inputs);
  BranchSet forward(const BranchSet& branches) const;
};

struct StageComponent {
  std::optional<CcwBlock> ccw1, ccw2;
  std::optional<MlfBlock> mlf;
};

struct Encoder {
  Transition to_branch2;
  std::vector<StageComponent> stage2;
  Transition to_branch3;
  std::vector<StageComponent> stage3;

  static Encoder build(LayerBuilder& b, const ModelConfig& cfg);
  BranchSet forward(const Tensor& stem_out) const;
  std::size_t ccw_blocks() const;
  std::size_t mlf_blocks() const;
};

// Lateral 1x1 maps, top-down nearest upsampling and sums, then a 3x3 conv +
// ReLU on each level. Returns (P1, P2, P3).
struct Fpn {
  std::vector<Conv> lateral, smooth;

  static Fpn build(LayerBuilder& b, const ModelConfig& cfg);
  std::vector<Tensor> forward(const BranchSet& branches) const;
};

// Regression head: 1x1 + ReLU then 1x1 to a single density channel.
struct Head {
  Conv fuse, out;

  static Head build(LayerBuilder& b, const std::string& prefix, std::int64_t in_channels, std::int64_t hidden);
  Tensor forward(const Tensor& x) const;
  // Brings (P1, P2, P3) to P1's resolution and concatenates before the head.
  Tensor forward_pyramid(const std::vector<Tensor>& levels) const;
};

}  // namespace rtcc::nn
