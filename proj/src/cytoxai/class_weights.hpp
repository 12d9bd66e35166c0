#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cytoxai {

struct SplitManifest;
enum class Split;

// Labels keep their insertion order.
struct ClassCounts {
  std::vector<std::pair<std::string, std::int64_t>> counts;

  std::int64_t total() const;
};

struct ClassWeights {
  std::vector<std::pair<std::string, double>> weights;

  // Throws ArgumentError for an unknown label.
  double at(std::string_view label) const;
  // Weights ordered as `labels`.
  std::vector<double> dense(std::span<const std::string> labels) const;
};

// Balanced weights w_c = N / (K * n_c).
ClassWeights compute_class_weights(const ClassCounts& counts);

// Counts records of one split (augmented children included) per cell class.
ClassCounts count_classes(const SplitManifest& manifest, Split split);

}  // namespace cytoxai
