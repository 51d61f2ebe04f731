#include <algorithm>
#include <cmath>
#include <sstream>

#include "rtcc/data/data.hpp"
#include "rtcc/error.hpp"

namespace rtcc::data {

namespace {

std::string describe(const Point& p) {
  std::ostringstream os;
  os << '(' << p.x << ',' << p.y << ')';
  return os.str();
}

template <typename T>
T uniform(std::mt19937_64& rng, T lo, T hi) {
  if constexpr (std::is_integral_v<T>) {
    return std::uniform_int_distribution<T>(lo, hi)(rng);
  } else {
    return std::uniform_real_distribution<T>(lo, hi)(rng);
  }
}

struct Head {
  double cx, cy, rx, ry, dark;
};

constexpr double kRing = 1.4;  // outer ring radius relative to the head ellipse

}  // namespace

Tensor gaussian_density(const HeadPoints& points, std::int64_t height, std::int64_t width, double sigma,
                        std::int64_t cell_scale, DType dtype) {
  if (!(sigma > 0.0)) throw UsageError("gaussian_density: sigma must be positive");
  if (cell_scale <= 0 || height <= 0 || width <= 0 || height % cell_scale != 0 || width % cell_scale != 0) {
    throw UsageError("gaussian_density: image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by cell scale " + std::to_string(cell_scale));
  }
  const std::int64_t h = height / cell_scale, w = width / cell_scale;
  std::vector<double> grid(static_cast<std::size_t>(h * w), 0.0);
  const double radius = 4.0 * sigma;
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> stamp;
  for (const auto& p : points) {
    if (!(p.x >= 0.0 && p.x < static_cast<double>(width) && p.y >= 0.0 && p.y < static_cast<double>(height))) {
      throw InputError("head point " + describe(p) + " lies outside the " + std::to_string(height) + "x" +
                       std::to_string(width) + " image");
    }
    const double gx = p.x / static_cast<double>(cell_scale);
    const double gy = p.y / static_cast<double>(cell_scale);
    const auto r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(gy - radius)));
    const auto r1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(gy + radius)));
    const auto c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(gx - radius)));
    const auto c1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(gx + radius)));
    const std::int64_t sw = c1 - c0 + 1;
    stamp.assign(static_cast<std::size_t>((r1 - r0 + 1) * sw), 0.0);
    double total = 0.0;
    for (std::int64_t r = r0; r <= r1; ++r) {
      for (std::int64_t c = c0; c <= c1; ++c) {
        const double dy = static_cast<double>(r) + 0.5 - gy;
        const double dx = static_cast<double>(c) + 0.5 - gx;
        const double d2 = dx * dx + dy * dy;
        if (d2 > radius * radius) continue;
        const double v = std::exp(-d2 * inv_two_var);
        stamp[static_cast<std::size_t>((r - r0) * sw + (c - c0))] = v;
        total += v;
      }
    }
    if (total <= 0.0) {
      // sigma far below one cell: all mass goes to the containing cell.
      const auto r = static_cast<std::int64_t>(gy), c = static_cast<std::int64_t>(gx);
      grid[static_cast<std::size_t>(r * w + c)] += 1.0;
      continue;
    }
    for (std::int64_t r = r0; r <= r1; ++r) {
      for (std::int64_t c = c0; c <= c1; ++c) {
        grid[static_cast<std::size_t>(r * w + c)] += stamp[static_cast<std::size_t>((r - r0) * sw + (c - c0))] / total;
      }
    }
  }
  return Tensor::from_values({1, 1, h, w}, grid, dtype);
}

Scene synth_scene(std::int64_t n_heads, std::int64_t height, std::int64_t width, std::uint64_t seed) {
  if (n_heads < 0) throw UsageError("synth_scene: negative head count");
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
    throw UsageError("synth_scene: dims " + std::to_string(height) + "x" + std::to_string(width) +
                     " must be positive multiples of 16");
  }
  std::mt19937_64 rng(seed);
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  const double scale = std::clamp(std::min(H, W) / 128.0, 1.0, 3.0);

  // Place heads by rejection: centres keep the ring inside the image and
  // neighbours may touch but never cover each other.
  std::vector<Head> heads;
  const double min_area = M_PI * (2.5 * scale) * (2.5 * scale * 1.1) * kRing * kRing;
  if (static_cast<double>(n_heads) * min_area > 0.9 * H * W) {
    throw InputError("synth_scene: " + std::to_string(n_heads) + " heads do not fit in " + std::to_string(height) +
                     "x" + std::to_string(width));
  }
  constexpr int kAttempts = 2000;
  for (std::int64_t i = 0; i < n_heads; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
      Head h{};
      h.rx = scale * uniform(rng, 2.5, 4.5);
      h.ry = h.rx * uniform(rng, 1.1, 1.35);
      h.dark = uniform(rng, 0.04, 0.2);
      const double mx = kRing * h.rx + 1.0, my = kRing * h.ry + 1.0;
      if (2 * mx >= W || 2 * my >= H) break;
      h.cx = uniform(rng, mx, W - mx);
      h.cy = uniform(rng, my, H - my);
      placed = std::none_of(heads.begin(), heads.end(), [&](const Head& o) {
        const double reach = 0.75 * (std::max(h.rx, h.ry) + std::max(o.rx, o.ry));
        return std::hypot(h.cx - o.cx, h.cy - o.cy) < reach;
      });
      if (placed) heads.push_back(h);
    }
    if (!placed) {
      throw InputError("synth_scene: could only place " + std::to_string(i) + " of " + std::to_string(n_heads) +
                       " heads in " + std::to_string(height) + "x" + std::to_string(width));
    }
  }

  // Background: tinted grey, a few low-frequency waves and pixel noise.
  const double base = uniform(rng, 0.45, 0.7);
  double tint[3];
  for (auto& t : tint) t = uniform(rng, -0.05, 0.05);
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[3];
  for (auto& wv : waves) {
    const double freq = uniform(rng, 0.02, 0.15), angle = uniform(rng, 0.0, M_PI);
    wv = {freq * std::cos(angle), freq * std::sin(angle), uniform(rng, 0.0, 2 * M_PI), uniform(rng, 0.02, 0.05)};
  }
  const std::size_t plane = static_cast<std::size_t>(height * width);
  std::vector<double> img(3 * plane);
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      double v = base;
      for (const auto& wv : waves) {
        v += wv.amp * std::sin(2 * M_PI * (wv.fx * static_cast<double>(x) + wv.fy * static_cast<double>(y)) + wv.phase);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        img[c * plane + static_cast<std::size_t>(y * width + x)] = v + tint[c] + uniform(rng, -0.04, 0.04);
      }
    }
  }

  // Rings first, then interiors, so no interior is painted over by a ring.
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& h : heads) {
      const double outer = pass == 0 ? kRing : 1.0;
      const auto y0 = static_cast<std::int64_t>(std::floor(h.cy - outer * h.ry));
      const auto y1 = static_cast<std::int64_t>(std::ceil(h.cy + outer * h.ry));
      const auto x0 = static_cast<std::int64_t>(std::floor(h.cx - outer * h.rx));
      const auto x1 = static_cast<std::int64_t>(std::ceil(h.cx + outer * h.rx));
      for (std::int64_t y = std::max<std::int64_t>(0, y0); y <= std::min(height - 1, y1); ++y) {
        for (std::int64_t x = std::max<std::int64_t>(0, x0); x <= std::min(width - 1, x1); ++x) {
          const double dx = (static_cast<double>(x) + 0.5 - h.cx) / h.rx;
          const double dy = (static_cast<double>(y) + 0.5 - h.cy) / h.ry;
          if (std::hypot(dx, dy) > outer) continue;
          const double v = pass == 0 ? 0.85 : h.dark;
          for (std::size_t c = 0; c < 3; ++c) img[c * plane + static_cast<std::size_t>(y * width + x)] = v;
        }
      }
    }
  }
  for (auto& v : img) v = std::clamp(v, 0.0, 1.0);

  Scene s;
  s.image = Tensor::from_values({3, height, width}, img, DType::f32);
  for (const auto& h : heads) s.points.push_back({h.cx, h.cy});
  s.true_count = static_cast<std::int64_t>(s.points.size());
  return s;
}

}  // namespace rtcc::data
