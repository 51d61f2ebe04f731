#include <algorithm>
#include <cmath>

#include "rtcc/data/data.hpp"
#include "rtcc/error.hpp"

namespace rtcc::data {

namespace {

void require_planes(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() < 2 || t.is_meta()) {
    throw UsageError(std::string(what) + ": expected a tensor with at least two dims");
  }
}

}  // namespace

Tensor flip_horizontal(const Tensor& t) {
  require_planes(t, "flip_horizontal");
  const std::int64_t w = t.dim(-1);
  const std::int64_t rows = t.numel() / w;
  Tensor out = Tensor::zeros(t.dims(), t.dtype());
  dispatch(t.dtype(), [&]<typename T>() {
    auto src = t.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::int64_t r = 0; r < rows; ++r) {
      std::reverse_copy(src.begin() + r * w, src.begin() + (r + 1) * w, dst.begin() + r * w);
    }
  });
  return out;
}

Tensor crop(const Tensor& t, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) {
  require_planes(t, "crop");
  const std::int64_t H = t.dim(-2), W = t.dim(-1);
  if (top < 0 || left < 0 || h <= 0 || w <= 0 || top + h > H || left + w > W) {
    throw InputError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(top) + "," +
                     std::to_string(left) + ") does not fit in " + std::to_string(H) + "x" + std::to_string(W));
  }
  Dims dims = t.dims();
  dims[dims.size() - 2] = h;
  dims[dims.size() - 1] = w;
  const std::int64_t planes = t.numel() / (H * W);
  Tensor out = Tensor::zeros(dims, t.dtype());
  dispatch(t.dtype(), [&]<typename T>() {
    auto src = t.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t y = 0; y < h; ++y) {
        const auto from = src.begin() + (p * H + top + y) * W + left;
        std::copy(from, from + w, dst.begin() + (p * h + y) * w);
      }
    }
  });
  return out;
}

Sample augment(const Tensor& image, const Tensor& density, const AugmentOptions& options, std::mt19937_64& flip_rng,
               std::mt19937_64& crop_rng) {
  if (!image.defined() || image.rank() != 3 || !density.defined() || density.rank() != 4) {
    throw UsageError("augment expects a (3,H,W) image and a (1,1,h,w) density");
  }
  const std::int64_t H = image.dim(1), W = image.dim(2), cell = options.cell_scale;
  if (cell <= 0 || density.dim(2) * cell != H || density.dim(3) * cell != W) {
    throw UsageError("augment: density " + to_string(density.dims()) + " does not match image " +
                     to_string(image.dims()) + " at cell scale " + std::to_string(cell));
  }
  const std::int64_t ch = options.crop_h > 0 ? options.crop_h : H;
  const std::int64_t cw = options.crop_w > 0 ? options.crop_w : W;
  if (ch > H || cw > W || ch % 16 != 0 || cw % 16 != 0) {
    throw InputError("crop " + std::to_string(ch) + "x" + std::to_string(cw) + " must fit in " + std::to_string(H) +
                     "x" + std::to_string(W) + " and be divisible by 16");
  }

  Sample s{image, density};
  if (std::bernoulli_distribution(std::clamp(options.flip_prob, 0.0, 1.0))(flip_rng)) {
    s.image = flip_horizontal(s.image);
    s.density = flip_horizontal(s.density);
  }
  if (ch != H || cw != W) {
    const std::int64_t top = cell * std::uniform_int_distribution<std::int64_t>(0, (H - ch) / cell)(crop_rng);
    const std::int64_t left = cell * std::uniform_int_distribution<std::int64_t>(0, (W - cw) / cell)(crop_rng);
    s.image = crop(s.image, top, left, ch, cw);
    s.density = crop(s.density, top / cell, left / cell, ch / cell, cw / cell);
  }
  return s;
}

Sample augment(const Tensor& image, const Tensor& density, const AugmentOptions& options, std::uint64_t seed) {
  std::seed_seq seq{seed, std::uint64_t{0x5eed}};
  std::mt19937_64 flip_rng(seq);
  std::mt19937_64 crop_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return augment(image, density, options, flip_rng, crop_rng);
}

Tensor normalize(const Tensor& image) {
  if (!image.defined() || image.rank() != 3 || image.is_meta()) throw UsageError("normalize expects a (C,H,W) image");
  const std::int64_t channels = image.dim(0);
  const std::int64_t plane = image.dim(1) * image.dim(2);
  Tensor out = Tensor::zeros(image.dims(), image.dtype());
  dispatch(image.dtype(), [&]<typename T>() {
    auto src = image.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto first = src.begin() + c * plane;
      double mean = 0.0;
      for (auto it = first; it != first + plane; ++it) mean += static_cast<double>(*it);
      mean /= static_cast<double>(plane);
      double var = 0.0;
      for (auto it = first; it != first + plane; ++it) var += (*it - mean) * (*it - mean);
      var /= static_cast<double>(plane);
      // Rounding noise on a constant channel must not be blown up to unit variance.
      if (var <= 1e-12 * std::max(1.0, mean * mean)) continue;
      const double inv = 1.0 / std::sqrt(var);
      for (std::int64_t i = 0; i < plane; ++i) {
        dst[static_cast<std::size_t>(c * plane + i)] = static_cast<T>((first[i] - mean) * inv);
      }
    }
  });
  return out;
}

}  // namespace rtcc::data
