#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "rtcc/tensor/tensor.hpp"

namespace rtcc::data {

// Pixel coordinates, origin top-left, x rightward, y downward.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};
using HeadPoints = std::vector<Point>;

inline constexpr std::int64_t kCellScale = 4;
inline constexpr double kDefaultSigma = 2.0;  // in density cells

// Density on a (1,1,H/cell_scale,W/cell_scale) grid. Each head adds a Gaussian
// centred on its grid position (cell centres at j + 0.5), truncated at radius
// 4*sigma cells and renormalized so the head contributes exactly 1.
// Throws InputError for points outside [0,W) x [0,H), UsageError for
// sigma <= 0 or dims not divisible by cell_scale.
Tensor gaussian_density(const HeadPoints& points, std::int64_t height, std::int64_t width, double sigma = kDefaultSigma,
                        std::int64_t cell_scale = kCellScale, DType dtype = DType::f32);

struct Scene {
  Tensor image;  // (3,H,W) in [0,1]
  HeadPoints points;
  std::int64_t true_count = 0;
};

// Dark elliptical heads with a light ring on a textured background.
// Deterministic in `seed`. Throws InputError when the heads cannot be placed
// without near-total overlap, UsageError for dims not divisible by 16.
Scene synth_scene(std::int64_t n_heads, std::int64_t height, std::int64_t width, std::uint64_t seed);

struct AugmentOptions {
  double flip_prob = 0.5;
  std::int64_t crop_h = 0;  // 0 keeps the full height
  std::int64_t crop_w = 0;
  std::int64_t cell_scale = kCellScale;
};

struct Sample {
  Tensor image;    // (3,H,W)
  Tensor density;  // (1,1,H/cell,W/cell)
};

// Joint horizontal flip and crop. Crop offsets are multiples of cell_scale so
// the density crop is exactly aligned. Throws InputError for crops that are
// larger than the image or not divisible by 16.
Sample augment(const Tensor& image, const Tensor& density, const AugmentOptions& options, std::mt19937_64& flip_rng,
               std::mt19937_64& crop_rng);
Sample augment(const Tensor& image, const Tensor& density, const AugmentOptions& options, std::uint64_t seed);

Tensor flip_horizontal(const Tensor& t);
// Rows [top, top+h) and columns [left, left+w) of the last two dims.
Tensor crop(const Tensor& t, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w);

// Per-channel zero mean / unit variance over one (3,H,W) image; constant
// channels become zeros.
Tensor normalize(const Tensor& image);

// One "x,y" decimal pair per line. Errors name the line.
HeadPoints parse_annotations(std::string_view text);
HeadPoints load_annotations(const std::filesystem::path& path);
void save_annotations(const std::filesystem::path& path, const HeadPoints& points);

// Binary P6, maxval 255, mapped to [0,1]. Errors give the byte offset.
Tensor parse_ppm(std::string_view bytes);
Tensor load_ppm(const std::filesystem::path& path);
void save_ppm(const std::filesystem::path& path, const Tensor& image);

// ".ctf" files hold a (3,H,W) tensor; anything else is read as PPM.
Tensor load_image(const std::filesystem::path& path);

struct DatasetEntry {
  std::string id;  // shared file stem
  std::filesystem::path image;
  std::filesystem::path points;
};

// Pairs NNNN.ppm + NNNN.txt sorted by stem. An image without annotations is
// an InputError, as is an empty or missing directory.
std::vector<DatasetEntry> list_dataset(const std::filesystem::path& dir);

struct LabeledImage {
  std::string id;
  Tensor image;
  HeadPoints points;
};
std::vector<LabeledImage> load_dataset(const std::filesystem::path& dir);

}  // namespace rtcc::data
