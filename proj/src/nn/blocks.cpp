#include "rtcc/nn/blocks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>

#include "rtcc/error.hpp"
#include "rtcc/tensor/ops.hpp"
#include "rtcc/tensor/trace.hpp"

namespace rtcc::nn {

namespace {

ConvSpec pointwise(std::int64_t in, std::int64_t out) { return {in, out, 1, 1, 1, 0, 1, 1, true}; }
ConvSpec depthwise3x3(std::int64_t channels, std::int64_t stride) {
  return {channels, channels, 3, 3, stride, 1, 1, channels, true};
}

std::int64_t reduced(std::int64_t channels, std::int64_t reduction) {
  return std::max<std::int64_t>(1, channels / reduction);
}

}  // namespace

void validate_branches(const BranchSet& branches) {
  if (branches.empty() || branches.size() > 3) {
    throw ShapeError("branch set must hold 1 to 3 branches, got " + std::to_string(branches.size()));
  }
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const auto& b = branches[i];
    if (!b.defined() || b.rank() != 4) throw ShapeError("branch " + std::to_string(i) + " is not an (N,C,H,W) tensor");
    if (i == 0) continue;
    const auto& prev = branches[i - 1];
    if (b.dim(0) != prev.dim(0) || 2 * b.dim(2) != prev.dim(2) || 2 * b.dim(3) != prev.dim(3)) {
      throw ShapeError("branch " + std::to_string(i) + " dims " + rtcc::to_string(b.dims()) +
                       " are not half of branch " + std::to_string(i - 1) + " dims " + rtcc::to_string(prev.dims()));
    }
  }
}

Tensor ParameterStore::add(std::string name, Tensor tensor) {
  for (const auto& item : items_) {
    if (item.name == name) throw UsageError("duplicate parameter name " + name);
  }
  items_.push_back({std::move(name), tensor});
  return tensor;
}

Tensor ParameterStore::find(std::string_view name) const {
  for (const auto& item : items_) {
    if (item.name == name) return item.tensor;
  }
  throw UsageError("unknown parameter " + std::string(name));
}

std::int64_t ParameterStore::count() const {
  std::int64_t n = 0;
  for (const auto& item : items_) n += item.tensor.numel();
  return n;
}

LayerBuilder::LayerBuilder(ParameterStore& store, std::uint64_t seed, DType dtype)
    : store_(store), rng_(seed), dtype_(dtype) {}

Conv LayerBuilder::conv(const std::string& name, const ConvSpec& spec) {
  spec.validate();
  const auto dims = spec.weight_dims();
  const double fan_in = static_cast<double>(dims[1] * dims[2] * dims[3]);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  std::vector<double> w(static_cast<std::size_t>(numel(dims)));
  for (auto& v : w) v = normal(rng_);
  Conv c{name, spec, Tensor::from_values(dims, w, dtype_), Tensor()};
  c.weight.set_requires_grad(true);
  store_.add(name + ".weight", c.weight);
  if (spec.has_bias) {
    c.bias = Tensor::zeros({spec.out_channels}, dtype_);
    c.bias.set_requires_grad(true);
    store_.add(name + ".bias", c.bias);
  }
  return c;
}

Tensor Conv::operator()(const Tensor& x) const {
  trace::NameScope scope(name, true);
  return ops::conv2d(x, spec, weight, bias);
}

ShuffleBlock ShuffleBlock::build(LayerBuilder& b, const std::string& prefix, std::int64_t channels) {
  const std::int64_t half = channels / 2;
  ShuffleBlock s;
  s.expand = b.conv(prefix + ".expand", pointwise(half, half));
  s.depthwise = b.conv(prefix + ".depthwise", depthwise3x3(half, 1));
  s.project = b.conv(prefix + ".project", pointwise(half, half));
  return s;
}

Tensor ShuffleBlock::forward(const Tensor& x) const {
  auto [keep, active] = ops::channel_split(x);
  active = ops::relu(expand(active));
  active = depthwise(active);
  active = ops::relu(project(active));
  const Tensor parts[] = {keep, active};
  return ops::channel_shuffle(ops::channel_concat(parts), 2);
}

Stem Stem::build(LayerBuilder& b, const ModelConfig& cfg) {
  struct K {
    std::int64_t k, s, p, d;
  };
  std::array<K, 3> ks{};
  switch (cfg.kernel_variant) {
    case KernelVariant::large: ks = {K{9, 2, 4, 1}, K{7, 2, 3, 1}, K{5, 1, 2, 1}}; break;
    case KernelVariant::small: ks = {K{3, 2, 1, 1}, K{3, 2, 1, 1}, K{3, 1, 1, 1}}; break;
    case KernelVariant::dilated: ks = {K{3, 2, 2, 2}, K{3, 2, 2, 2}, K{3, 1, 2, 2}}; break;
  }
  const std::array<std::int64_t, 4> ch{3, cfg.stem_channels[0], cfg.stem_channels[1], cfg.stem_channels[2]};
  Stem s;
  Conv* convs[] = {&s.conv1, &s.conv2, &s.conv3};
  for (std::size_t i = 0; i < 3; ++i) {
    *convs[i] = b.conv("stem.conv" + std::to_string(i + 1),
                       ConvSpec{ch[i], ch[i + 1], ks[i].k, ks[i].k, ks[i].s, ks[i].p, ks[i].d, 1, true});
  }
  s.shuffle1 = ShuffleBlock::build(b, "stem.shuffle1", ch[3]);
  s.shuffle2 = ShuffleBlock::build(b, "stem.shuffle2", ch[3]);
  return s;
}

Tensor Stem::convs_forward(const Tensor& image) const {
  trace::NameScope scope("stem", true);
  Tensor x = ops::relu(conv1(image));
  x = ops::relu(conv2(x));
  return ops::relu(conv3(x));
}

Tensor Stem::forward(const Tensor& image) const {
  Tensor x = convs_forward(image);
  {
    trace::NameScope scope("stem.shuffle1", true);
    x = shuffle1.forward(x);
  }
  trace::NameScope scope("stem.shuffle2", true);
  return shuffle2.forward(x);
}

Tensor DownUnit::forward(const Tensor& x) const { return pointwise(depthwise(x)); }

DownPath DownPath::build(LayerBuilder& b, const std::string& prefix, std::int64_t from_channels,
                         std::int64_t to_channels, std::int64_t steps) {
  DownPath path;
  for (std::int64_t u = 0; u < steps; ++u) {
    const std::string name = prefix + ".unit" + std::to_string(u);
    const std::int64_t out = u + 1 == steps ? to_channels : from_channels;
    path.units.push_back({b.conv(name + ".depthwise", depthwise3x3(from_channels, 2)),
                          b.conv(name + ".pointwise", pointwise(from_channels, out))});
  }
  return path;
}

Tensor DownPath::forward(const Tensor& x) const {
  Tensor y = x;
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (u > 0) y = ops::relu(y);
    y = units[u].forward(y);
  }
  return y;
}

CcwBlock CcwBlock::build(LayerBuilder& b, const std::string& prefix, std::span<const std::int64_t> channels,
                         std::int64_t reduction) {
  CcwBlock block;
  block.name = prefix;
  std::int64_t total_half = 0;
  for (auto c : channels) total_half += c / 2;
  block.cross_reduce = b.conv(prefix + ".cross.reduce", pointwise(total_half, reduced(total_half, reduction)));
  block.cross_expand = b.conv(prefix + ".cross.expand", pointwise(reduced(total_half, reduction), total_half));
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string branch = prefix + ".branch" + std::to_string(i + 1);
    const std::int64_t half = channels[i] / 2;
    block.depthwise.push_back(b.conv(branch + ".depthwise", depthwise3x3(half, 1)));
    block.spatial_reduce.push_back(b.conv(branch + ".spatial.reduce", pointwise(half, reduced(half, reduction))));
    block.spatial_expand.push_back(b.conv(branch + ".spatial.expand", pointwise(reduced(half, reduction), half)));
  }
  return block;
}

BranchSet CcwBlock::forward(const BranchSet& branches) const {
  validate_branches(branches);
  if (branches.size() != depthwise.size()) {
    throw ShapeError("CCW block built for " + std::to_string(depthwise.size()) + " branches, got " +
                     std::to_string(branches.size()));
  }
  trace::NameScope scope(name, true);
  const std::size_t k = branches.size();
  std::vector<Tensor> keep(k), active(k);
  for (std::size_t i = 0; i < k; ++i) std::tie(keep[i], active[i]) = ops::channel_split(branches[i]);

  // Cross-resolution weights computed jointly at the smallest resolution.
  const std::int64_t min_h = branches.back().dim(2), min_w = branches.back().dim(3);
  std::vector<Tensor> pooled;
  for (std::size_t i = 0; i < k; ++i) pooled.push_back(ops::adaptive_avg_pool(active[i], min_h, min_w));
  Tensor weights = ops::sigmoid(cross_expand(ops::relu(cross_reduce(ops::channel_concat(pooled)))));
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::int64_t half = active[i].dim(1);
    Tensor w = ops::channel_slice(weights, offset, half);
    offset += half;
    w = ops::upsample_nearest(w, std::int64_t{1} << (k - 1 - i));
    active[i] = ops::mul(active[i], w);
  }

  BranchSet out;
  for (std::size_t i = 0; i < k; ++i) {
    Tensor y = depthwise[i](active[i]);
    Tensor s = ops::sigmoid(spatial_expand[i](ops::relu(spatial_reduce[i](ops::global_avg_pool(y)))));
    y = ops::mul(y, s);
    const Tensor parts[] = {keep[i], y};
    out.push_back(ops::channel_shuffle(ops::channel_concat(parts), 2));
  }
  return out;
}

MlfBlock MlfBlock::build(LayerBuilder& b, const std::string& prefix, std::span<const std::int64_t> channels,
                         std::size_t inputs, bool add_branch) {
  if (inputs < 1 || inputs > 3) throw ConfigError("MLF block needs 1 to 3 input branches");
  if (add_branch && inputs >= 3) throw ConfigError("MLF block cannot add a branch beyond 3 branches");
  const std::size_t outputs = inputs + (add_branch ? 1 : 0);
  if (channels.size() < outputs) throw ConfigError("MLF block: not enough branch channel counts");
  MlfBlock block;
  block.name = prefix;
  block.inputs = inputs;
  block.add_branch = add_branch;
  block.paths.resize(outputs);
  for (std::size_t j = 1; j < outputs; ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      block.paths[j].push_back(DownPath::build(b, prefix + ".path" + std::to_string(i + 1) + std::to_string(j + 1),
                                               channels[i], channels[j], static_cast<std::int64_t>(j - i)));
    }
  }
  return block;
}

BranchSet MlfBlock::forward(const BranchSet& branches) const {
  validate_branches(branches);
  if (branches.size() != inputs) {
    throw ShapeError("MLF block built for " + std::to_string(inputs) + " branches, got " +
                     std::to_string(branches.size()));
  }
  trace::NameScope scope(name, true);
  BranchSet out;
  for (std::size_t j = 0; j < paths.size(); ++j) {
    Tensor acc = j < inputs ? branches[j] : Tensor();
    for (std::size_t i = 0; i < j; ++i) {
      Tensor contribution = paths[j][i].forward(branches[i]);
      acc = acc.defined() ? ops::add(acc, contribution) : contribution;
    }
    out.push_back(ops::relu(acc));
  }
  return out;
}

Transition Transition::build(LayerBuilder& b, const std::string& prefix, std::span<const std::int64_t> channels,
                             std::size_t inputs) {
  if (inputs < 1 || inputs >= channels.size()) throw ConfigError("transition needs a branch to create");
  Transition t;
  t.name = prefix;
  for (std::size_t i = 0; i < inputs; ++i) {
    t.paths.push_back(DownPath::build(b, prefix + ".path" + std::to_string(i + 1) + std::to_string(inputs + 1),
                                      channels[i], channels[inputs], static_cast<std::int64_t>(inputs - i)));
  }
  return t;
}

BranchSet Transition::forward(const BranchSet& branches) const {
  validate_branches(branches);
  if (branches.size() != paths.size()) throw ShapeError("transition input branch count mismatch");
  trace::NameScope scope(name, true);
  Tensor acc;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    Tensor contribution = paths[i].forward(branches[i]);
    acc = acc.defined() ? ops::add(acc, contribution) : contribution;
  }
  BranchSet out = branches;
  out.push_back(ops::relu(acc));
  return out;
}

Encoder Encoder::build(LayerBuilder& b, const ModelConfig& cfg) {
  const auto& ch = cfg.branch_channels;
  const bool with_ccw = cfg.ablation_mode != AblationMode::mlf_only;
  const bool with_mlf = cfg.ablation_mode != AblationMode::ccw_only;
  auto stage = [&](const std::string& name, std::size_t nbranches, std::int64_t repeats) {
    std::vector<StageComponent> comps;
    const std::span<const std::int64_t> active(ch.data(), nbranches);
    for (std::int64_t r = 0; r < repeats; ++r) {
      const std::string prefix = "encoder." + name + "." + std::to_string(r);
      StageComponent c;
      if (with_ccw) {
        c.ccw1 = CcwBlock::build(b, prefix + ".ccw1", active, cfg.ccw_reduction);
        c.ccw2 = CcwBlock::build(b, prefix + ".ccw2", active, cfg.ccw_reduction);
      }
      if (with_mlf) c.mlf = MlfBlock::build(b, prefix + ".mlf", ch, nbranches, false);
      comps.push_back(std::move(c));
    }
    return comps;
  };
  Encoder e;
  e.to_branch2 = Transition::build(b, "encoder.transition2", ch, 1);
  e.stage2 = stage("stage2", 2, cfg.stage_repeats[0]);
  e.to_branch3 = Transition::build(b, "encoder.transition3", ch, 2);
  e.stage3 = stage("stage3", 3, cfg.stage_repeats[1]);
  return e;
}

BranchSet Encoder::forward(const Tensor& stem_out) const {
  auto run_stage = [](BranchSet x, const std::vector<StageComponent>& comps) {
    for (const auto& c : comps) {
      if (c.ccw1) x = c.ccw1->forward(x);
      if (c.ccw2) x = c.ccw2->forward(x);
      if (c.mlf) x = c.mlf->forward(x);
    }
    return x;
  };
  BranchSet x{stem_out};
  x = to_branch2.forward(x);
  x = run_stage(std::move(x), stage2);
  x = to_branch3.forward(x);
  return run_stage(std::move(x), stage3);
}

std::size_t Encoder::ccw_blocks() const {
  std::size_t n = 0;
  for (const auto* s : {&stage2, &stage3}) {
    for (const auto& c : *s) n += (c.ccw1 ? 1 : 0) + (c.ccw2 ? 1 : 0);
  }
  return n;
}

std::size_t Encoder::mlf_blocks() const {
  std::size_t n = 0;
  for (const auto* s : {&stage2, &stage3}) {
    for (const auto& c : *s) n += c.mlf ? 1 : 0;
  }
  return n;
}

Fpn Fpn::build(LayerBuilder& b, const ModelConfig& cfg) {
  Fpn f;
  for (std::size_t i = 0; i < 3; ++i) {
    f.lateral.push_back(b.conv("fpn.lateral" + std::to_string(i + 1), pointwise(cfg.branch_channels[i], cfg.fpn_channels)));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    f.smooth.push_back(b.conv("fpn.smooth" + std::to_string(i + 1),
                              ConvSpec{cfg.fpn_channels, cfg.fpn_channels, 3, 3, 1, 1, 1, 1, true}));
  }
  return f;
}

std::vector<Tensor> Fpn::forward(const BranchSet& branches) const {
  validate_branches(branches);
  if (branches.size() != 3) {
    throw ShapeError("FPN decoder needs exactly 3 branches, got " + std::to_string(branches.size()));
  }
  trace::NameScope scope("fpn", true);
  Tensor p3 = lateral[2](branches[2]);
  Tensor p2 = ops::add(lateral[1](branches[1]), ops::upsample_nearest(p3, 2));
  Tensor p1 = ops::add(lateral[0](branches[0]), ops::upsample_nearest(p2, 2));
  return {ops::relu(smooth[0](p1)), ops::relu(smooth[1](p2)), ops::relu(smooth[2](p3))};
}

Head Head::build(LayerBuilder& b, const std::string& prefix, std::int64_t in_channels, std::int64_t hidden) {
  return {b.conv(prefix + ".fuse", pointwise(in_channels, hidden)), b.conv(prefix + ".out", pointwise(hidden, 1))};
}

Tensor Head::forward(const Tensor& x) const { return out(ops::relu(fuse(x))); }

Tensor Head::forward_pyramid(const std::vector<Tensor>& levels) const {
  trace::NameScope scope("head", true);
  const Tensor parts[] = {levels.at(0), ops::upsample_nearest(levels.at(1), 2), ops::upsample_nearest(levels.at(2), 4)};
  return forward(ops::channel_concat(parts));
}

}  // namespace rtcc::nn
