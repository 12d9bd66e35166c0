#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cytoxai/dataset.hpp"
#include "cytoxai/model_zoo.hpp"
#include "cytoxai/training.hpp"

namespace cytoxai {

struct ExplainDefaults {
  std::string method = "gradcam";
  // Empty: last convolution.
  std::string layer;
  int class_index = -1;
  int lime_samples = 1000;
  int lime_segments = 50;
  // <= 0: 0.25 * sqrt(segments).
  double lime_kernel_width = 0.0;
  double lime_lambda = 1.0;
  int top_k = 5;

  friend bool operator==(const ExplainDefaults&, const ExplainDefaults&) = default;
};

// Everything a run needs. `seed` is copied into encoder.seed and train.seed.
inline EncoderSpec default_encoder() {
  EncoderSpec e;
  e.architecture = Architecture::densenet169;
  return e;
}

struct RunConfig {
  std::filesystem::path dataset_root;
  std::filesystem::path output_dir = "runs";
  std::uint64_t seed = 0;
  double size_bin_width = 5.0;
  SplitRatios ratios;
  int augment_factor = 6;
  std::vector<AugmentKind> augment_kinds{AugmentKind::rotate,  AugmentKind::translate, AugmentKind::scale,
                                         AugmentKind::shear,   AugmentKind::flip,      AugmentKind::noise,
                                         AugmentKind::contrast, AugmentKind::brightness};
  bool augment_replacement = false;
  AugmentParams augment_params;
  EncoderSpec encoder = default_encoder();
  TrainConfig train;
  // Split whose class counts give the cost-sensitive weights when
  // train.class_weights is "auto".
  Split weights_split = Split::train;
  ExplainDefaults explain;

  void validate() const;
  // Loss name implied by the mode: categorical_ce, weighted_ce or the
  // contrastive stage-1 loss.
  std::string loss_name() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Flat `section.key = value` lines; lines starting with '#' are comments. Unknown keys,
// duplicate keys and malformed values raise ConfigError naming the key and line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
// Sets one key as if it appeared in a config file. Values are type-checked;
// cross-field validation is left to validate() so overrides can be chained.
void apply_override(RunConfig& config, std::string_view key, std::string_view value);
// Every key, one per line, in a fixed order. parse_config inverts it exactly.
std::string serialize_config(const RunConfig& config);
// SHA-256 of serialize_config.
std::string config_hash(const RunConfig& config);
std::vector<std::string> config_keys();

}  // namespace cytoxai
