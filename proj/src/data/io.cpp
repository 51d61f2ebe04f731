#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "rtcc/data/data.hpp"
#include "rtcc/error.hpp"
#include "rtcc/tensor/ctf.hpp"

namespace rtcc::data {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

std::string read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Reads one whitespace-delimited header token of a PPM, skipping comments.
class PpmHeader {
 public:
  explicit PpmHeader(std::string_view bytes) : bytes_(bytes) {}

  std::int64_t number(const char* what) {
    skip_space();
    const std::size_t start = pos_;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(bytes_.data() + pos_, bytes_.data() + bytes_.size(), v);
    if (ec != std::errc() || v <= 0) {
      throw InputError("PPM: bad " + std::string(what) + " at byte " + std::to_string(start));
    }
    pos_ = static_cast<std::size_t>(ptr - bytes_.data());
    return v;
  }

  // Exactly one whitespace byte separates the header from the pixels.
  std::size_t payload_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw InputError("PPM: missing whitespace after header at byte " + std::to_string(pos_));
    }
    return pos_ + 1;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

HeadPoints parse_annotations(std::string_view text) {
  HeadPoints points;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    Point p;
    if (comma == std::string_view::npos || !parse_double(line.substr(0, comma), p.x) ||
        !parse_double(line.substr(comma + 1), p.y)) {
      throw InputError("annotations line " + std::to_string(line_no) + ": expected \"x,y\", got \"" +
                       std::string(line) + "\"");
    }
    points.push_back(p);
  }
  return points;
}

HeadPoints load_annotations(const std::filesystem::path& path) {
  try {
    return parse_annotations(read_binary(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void save_annotations(const std::filesystem::path& path, const HeadPoints& points) {
  std::ofstream out(path, std::ios::binary);
  out << std::setprecision(17);
  for (const auto& p : points) out << p.x << ',' << p.y << '\n';
  if (!out) throw InputError("failed to write " + path.string());
}

Tensor parse_ppm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P6") throw InputError("PPM: expected magic \"P6\" at byte 0");
  PpmHeader header(bytes);
  header.advance(2);
  const std::int64_t width = header.number("width");
  const std::int64_t height = header.number("height");
  const std::size_t maxval_at = header.pos();
  if (header.number("maxval") != 255) {
    throw InputError("PPM: only maxval 255 is supported (byte " + std::to_string(maxval_at) + ")");
  }
  const std::size_t start = header.payload_start();
  const auto plane = static_cast<std::size_t>(width * height);
  if (bytes.size() - start < 3 * plane) {
    throw InputError("PPM: truncated pixel data at byte " + std::to_string(bytes.size()) + ", expected " +
                     std::to_string(start + 3 * plane) + " bytes");
  }
  std::vector<float> values(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      values[c * plane + i] = static_cast<float>(static_cast<unsigned char>(bytes[start + 3 * i + c])) / 255.0f;
    }
  }
  return Tensor::from_vector({3, height, width}, std::move(values));
}

Tensor load_ppm(const std::filesystem::path& path) {
  try {
    return parse_ppm(read_binary(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void save_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3) throw UsageError("save_ppm expects a (3,H,W) image");
  const std::int64_t height = image.dim(1), width = image.dim(2);
  const auto plane = static_cast<std::size_t>(height * width);
  const auto v = image.to_vector();
  std::string pixels(3 * plane, '\0');
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      pixels[3 * i + c] = static_cast<char>(std::lround(std::clamp(v[c * plane + i], 0.0, 1.0) * 255.0));
    }
  }
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << width << ' ' << height << "\n255\n" << pixels;
  if (!out) throw InputError("failed to write " + path.string());
}

Tensor load_image(const std::filesystem::path& path) {
  if (path.extension() != ".ctf") return load_ppm(path);
  Tensor t = ctf::load(path);
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw InputError(path.string() + ": image tensor must have dims (3,H,W), got " + to_string(t.dims()));
  }
  return t.to(DType::f32);
}

std::vector<DatasetEntry> list_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("dataset directory " + dir.string() + " does not exist");
  std::map<std::string, DatasetEntry> by_stem;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".ppm") continue;
    const std::string stem = e.path().stem().string();
    const auto points = dir / (stem + ".txt");
    if (!std::filesystem::exists(points)) {
      throw InputError("image " + e.path().string() + " has no annotation file " + points.string());
    }
    by_stem[stem] = {stem, e.path(), points};
  }
  if (by_stem.empty()) throw InputError("dataset directory " + dir.string() + " holds no .ppm/.txt pairs");
  std::vector<DatasetEntry> out;
  for (auto& [stem, entry] : by_stem) out.push_back(std::move(entry));
  return out;
}

std::vector<LabeledImage> load_dataset(const std::filesystem::path& dir) {
  std::vector<LabeledImage> out;
  for (const auto& e : list_dataset(dir)) out.push_back({e.id, load_ppm(e.image), load_annotations(e.points)});
  return out;
}

}  // namespace rtcc::data
