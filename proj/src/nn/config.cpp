#include "rtcc/nn/config.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <fstream>
#include <sstream>

#include "rtcc/error.hpp"

namespace rtcc {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const KeyValue& kv, std::string_view expected) {
  throw ConfigError("line " + std::to_string(kv.line) + ": invalid value '" + kv.value + "' for " + kv.key +
                    " (expected " + std::string(expected) + ")");
}

std::int64_t parse_int(const KeyValue& kv, std::string_view text) {
  text = trim(text);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) bad_value(kv, "an integer");
  return v;
}

double parse_real(const KeyValue& kv) {
  const std::string_view text = trim(kv.value);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) bad_value(kv, "a number");
  return v;
}

template <std::size_t N>
std::array<std::int64_t, N> parse_list(const KeyValue& kv) {
  std::array<std::int64_t, N> out{};
  std::string_view rest = kv.value;
  for (std::size_t i = 0; i < N; ++i) {
    const auto comma = rest.find(',');
    if ((comma == std::string_view::npos) != (i + 1 == N)) {
      bad_value(kv, std::to_string(N) + " comma-separated integers");
    }
    out[i] = parse_int(kv, rest.substr(0, comma));
    if (comma != std::string_view::npos) rest.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) + "'");
    }
    out.push_back({std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no});
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

namespace nn {

std::string_view to_string(KernelVariant v) {
  switch (v) {
    case KernelVariant::large: return "large";
    case KernelVariant::small: return "small";
    case KernelVariant::dilated: return "dilated";
  }
  return "?";
}

std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::full: return "full";
    case AblationMode::ccw_only: return "ccw_only";
    case AblationMode::mlf_only: return "mlf_only";
    case AblationMode::stem_only: return "stem_only";
    case AblationMode::stem_encoder: return "stem_encoder";
  }
  return "?";
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  auto positive = [&](std::int64_t v, const std::string& what) {
    if (v <= 0) problems.push_back(what + " must be positive (got " + std::to_string(v) + ")");
  };
  for (std::size_t i = 0; i < 2; ++i) positive(stage_repeats[i], "stage_repeats[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < 3; ++i) {
    positive(branch_channels[i], "branch_channels[" + std::to_string(i) + "]");
    positive(stem_channels[i], "stem_channels[" + std::to_string(i) + "]");
    if (branch_channels[i] % 2 != 0) {
      problems.push_back("branch_channels[" + std::to_string(i) + "] must be even for channel split");
    }
  }
  positive(fpn_channels, "fpn_channels");
  positive(head_channels, "head_channels");
  positive(ccw_reduction, "ccw_reduction");
  if (!(output_scale > 0.0 && std::isfinite(output_scale))) {
    problems.push_back("output_scale must be positive and finite");
  }
  if (stem_channels[2] != branch_channels[0]) {
    problems.push_back("stem_channels[2] (" + std::to_string(stem_channels[2]) + ") must equal branch_channels[0] (" +
                       std::to_string(branch_channels[0]) + ")");
  }
  if (!(branch_channels[0] < branch_channels[1] && branch_channels[1] < branch_channels[2])) {
    problems.push_back("branch_channels must be strictly increasing");
  }
  if (problems.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "kernel_variant=" << to_string(kernel_variant) << '\n'
     << "stage_repeats=" << stage_repeats[0] << ',' << stage_repeats[1] << '\n'
     << "branch_channels=" << branch_channels[0] << ',' << branch_channels[1] << ',' << branch_channels[2] << '\n'
     << "stem_channels=" << stem_channels[0] << ',' << stem_channels[1] << ',' << stem_channels[2] << '\n'
     << "fpn_channels=" << fpn_channels << '\n'
     << "head_channels=" << head_channels << '\n'
     << "ablation_mode=" << to_string(ablation_mode) << '\n'
     << "ccw_reduction=" << ccw_reduction << '\n'
     << std::setprecision(17) << "output_scale=" << output_scale << '\n';
  return os.str();
}

bool ModelConfig::apply(const KeyValue& kv) {
  if (kv.key == "kernel_variant") {
    if (kv.value == "large") kernel_variant = KernelVariant::large;
    else if (kv.value == "small") kernel_variant = KernelVariant::small;
    else if (kv.value == "dilated") kernel_variant = KernelVariant::dilated;
    else bad_value(kv, "large, small or dilated");
  } else if (kv.key == "stage_repeats") {
    stage_repeats = parse_list<2>(kv);
  } else if (kv.key == "branch_channels") {
    branch_channels = parse_list<3>(kv);
  } else if (kv.key == "stem_channels") {
    stem_channels = parse_list<3>(kv);
  } else if (kv.key == "fpn_channels") {
    fpn_channels = parse_int(kv, kv.value);
  } else if (kv.key == "head_channels") {
    head_channels = parse_int(kv, kv.value);
  } else if (kv.key == "ccw_reduction") {
    ccw_reduction = parse_int(kv, kv.value);
  } else if (kv.key == "output_scale") {
    output_scale = parse_real(kv);
  } else if (kv.key == "ablation_mode") {
    if (kv.value == "full") ablation_mode = AblationMode::full;
    else if (kv.value == "ccw_only") ablation_mode = AblationMode::ccw_only;
    else if (kv.value == "mlf_only") ablation_mode = AblationMode::mlf_only;
    else if (kv.value == "stem_only") ablation_mode = AblationMode::stem_only;
    else if (kv.value == "stem_encoder") ablation_mode = AblationMode::stem_encoder;
    else bad_value(kv, "full, ccw_only, mlf_only, stem_only or stem_encoder");
  } else {
    return false;
  }
  return true;
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig cfg;
  for (const auto& kv : parse_key_values(text)) {
    if (!cfg.apply(kv)) {
      throw ConfigError("line " + std::to_string(kv.line) + ": unknown model config key '" + kv.key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  try {
    return parse(read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace nn
}  // namespace rtcc
