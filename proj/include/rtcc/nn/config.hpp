#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rtcc {

// One "key=value" line. Blank lines and lines starting with '#' are skipped.
struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

std::vector<KeyValue> parse_key_values(std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

namespace nn {

enum class KernelVariant { large, small, dilated };
enum class AblationMode { full, ccw_only, mlf_only, stem_only, stem_encoder };

std::string_view to_string(KernelVariant v);
std::string_view to_string(AblationMode m);

struct ModelConfig {
  KernelVariant kernel_variant = KernelVariant::large;
  std::array<std::int64_t, 2> stage_repeats{2, 2};
  std::array<std::int64_t, 3> branch_channels{36, 64, 96};
  std::array<std::int64_t, 3> stem_channels{8, 16, 36};
  std::int64_t fpn_channels = 32;
  std::int64_t head_channels = 32;
  AblationMode ablation_mode = AblationMode::full;
  std::int64_t ccw_reduction = 4;
  // Fixed multiplier on the head output. Below 1 it lets the last layers work
  // at a larger scale than the tiny per-cell densities, which speeds training.
  double output_scale = 1.0;

  // Throws ConfigError listing every violated invariant.
  void validate() const;

  // key=value text, field names as keys; lists are comma separated.
  std::string to_text() const;
  // Unknown keys and malformed values are ConfigErrors naming the line.
  static ModelConfig parse(std::string_view text);
  static ModelConfig load(const std::filesystem::path& path);

  // Applies one key; returns false if the key is not a ModelConfig field.
  bool apply(const KeyValue& kv);

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace nn
}  // namespace rtcc
