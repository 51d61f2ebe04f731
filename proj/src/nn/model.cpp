#include "rtcc/nn/model.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include "rtcc/error.hpp"
#include "rtcc/tensor/ctf.hpp"
#include "rtcc/tensor/ops.hpp"
#include "rtcc/tensor/trace.hpp"

namespace rtcc::nn {

namespace {

bool has_encoder(AblationMode m) { return m != AblationMode::stem_only; }
bool has_fpn(AblationMode m) { return m != AblationMode::stem_only && m != AblationMode::stem_encoder; }

void require_image(const Tensor& image) {
  if (!image.defined() || image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("model expects an (N,3,H,W) image, got " +
                     (image.defined() ? rtcc::to_string(image.dims()) : std::string("<undefined>")));
  }
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0) {
    throw ShapeError("image height and width must be divisible by 16, got " + std::to_string(image.dim(2)) + "x" +
                     std::to_string(image.dim(3)));
  }
}

}  // namespace

Model Model::build(const ModelConfig& config, std::uint64_t seed, DType dtype) {
  config.validate();
  Model m;
  m.config_ = config;
  m.dtype_ = dtype;
  LayerBuilder b(m.store_, seed, dtype);
  m.stem_ = Stem::build(b, config);
  const AblationMode mode = config.ablation_mode;
  if (has_encoder(mode)) m.encoder_ = Encoder::build(b, config);
  if (has_fpn(mode)) {
    m.fpn_ = Fpn::build(b, config);
    m.head_ = Head::build(b, "head", 3 * config.fpn_channels, config.head_channels);
  } else {
    m.head_ = Head::build(b, "head", config.branch_channels[0], config.head_channels);
  }
  return m;
}

Tensor Model::stem_forward(const Tensor& image) const {
  require_image(image);
  return stem_.forward(image);
}

BranchSet Model::encoder_forward(const Tensor& stem_out) const {
  if (!encoder_) throw UsageError("ablation mode " + std::string(to_string(config_.ablation_mode)) + " has no encoder");
  return encoder_->forward(stem_out);
}

Tensor Model::decoder_forward(const BranchSet& branches) const {
  if (!fpn_) throw UsageError("ablation mode " + std::string(to_string(config_.ablation_mode)) + " has no FPN decoder");
  return head_->forward_pyramid(fpn_->forward(branches));
}

Tensor Model::forward(const Tensor& image) const {
  Tensor s = stem_forward(image);
  Tensor out;
  switch (config_.ablation_mode) {
    case AblationMode::stem_only: {
      trace::NameScope scope("head", true);
      out = head_->forward(s);
      break;
    }
    case AblationMode::stem_encoder: {
      BranchSet branches = encoder_forward(s);
      trace::NameScope scope("head", true);
      out = head_->forward(branches.front());
      break;
    }
    default:
      out = decoder_forward(encoder_forward(s));
  }
  if (config_.output_scale == 1.0) return out;
  trace::NameScope scope("head", true);
  return ops::scale(out, config_.output_scale);
}

std::int64_t stem_receptive_field(KernelVariant variant) {
  struct Layer {
    std::int64_t k, s, d;
  };
  std::array<Layer, 3> layers{};
  switch (variant) {
    case KernelVariant::large: layers = {Layer{9, 2, 1}, Layer{7, 2, 1}, Layer{5, 1, 1}}; break;
    case KernelVariant::small: layers = {Layer{3, 2, 1}, Layer{3, 2, 1}, Layer{3, 1, 1}}; break;
    case KernelVariant::dilated: layers = {Layer{3, 2, 2}, Layer{3, 2, 2}, Layer{3, 1, 2}}; break;
  }
  std::int64_t r = 1, jump = 1;
  for (const auto& l : layers) {
    r += (l.k - 1) * l.d * jump;
    jump *= l.s;
  }
  return r;
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
  for (const auto& p : model.parameters()) {
    const std::string file = p.name + ".ctf";
    ctf::save(dir / file, p.tensor);
    manifest << p.name << '=' << file << '\n';
  }
  std::ofstream config(dir / "config.txt", std::ios::binary);
  config << model.config().to_text();
  if (!manifest || !config) throw InputError("failed to write checkpoint to " + dir.string());
}

Model load_checkpoint(const std::filesystem::path& dir) {
  const ModelConfig config = ModelConfig::load(dir / "config.txt");
  const auto entries = parse_key_values(read_text_file(dir / "manifest.txt"));
  if (entries.empty()) throw InputError("checkpoint manifest " + (dir / "manifest.txt").string() + " is empty");

  const DType dtype = ctf::load(dir / entries.front().value).dtype();
  Model model = Model::build(config, 0, dtype);
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.key).second) throw InputError("manifest line " + std::to_string(e.line) + ": duplicate " + e.key);
    Tensor target;
    try {
      target = model.parameter(e.key);
    } catch (const UsageError&) {
      throw InputError("manifest line " + std::to_string(e.line) + ": unknown parameter " + e.key);
    }
    const Tensor loaded = ctf::load(dir / e.value);
    if (loaded.dims() != target.dims() || loaded.dtype() != target.dtype()) {
      throw InputError("checkpoint tensor " + e.key + " has dims " + rtcc::to_string(loaded.dims()) + " " +
                       std::string(rtcc::to_string(loaded.dtype())) + ", expected " + rtcc::to_string(target.dims()) + " " +
                       std::string(rtcc::to_string(target.dtype())));
    }
    dispatch(dtype, [&]<typename T>() {
      auto src = loaded.data<T>();
      std::copy(src.begin(), src.end(), target.mutable_data<T>().begin());
    });
  }
  if (seen.size() != model.parameters().size()) {
    throw InputError("checkpoint manifest lists " + std::to_string(seen.size()) + " of " +
                     std::to_string(model.parameters().size()) + " parameters");
  }
  return model;
}

gradcheck::Result check_model_gradients(const ModelConfig& config, const Dims& input_dims,
                                        const gradcheck::Options& options, std::uint64_t seed) {
  const Model m = Model::build(config, seed, DType::f64);
  std::uint64_t bias_seed = seed * 1000 + 100;
  for (const auto& p : m.parameters()) {
    if (!p.name.ends_with(".bias")) continue;
    const Tensor r = gradcheck::random_tensor(p.tensor.dims(), bias_seed++, DType::f64, 0.1);
    Tensor target = p.tensor;
    std::ranges::copy(r.data<double>(), target.mutable_data<double>().begin());
  }
  std::vector<Tensor> inputs{gradcheck::random_tensor(input_dims, seed + 1)};
  for (const auto& p : m.parameters()) inputs.push_back(p.tensor);
  const std::uint64_t proj = seed + 2;
  return gradcheck::check(
      "model " + rtcc::to_string(input_dims),
      [&](std::span<const Tensor> in) { return gradcheck::random_projection(m.forward(in[0]), proj); }, inputs,
      options);
}

}  // namespace rtcc::nn
