#include "cytoxai/class_weights.hpp"

#include <fmt/format.h>

#include "cytoxai/dataset.hpp"
#include "cytoxai/error.hpp"

namespace cytoxai {

std::int64_t ClassCounts::total() const {
  std::int64_t n = 0;
  for (const auto& [label, count] : counts) n += count;
  return n;
}

double ClassWeights::at(std::string_view label) const {
  for (const auto& [name, w] : weights) {
    if (name == label) return w;
  }
  throw ArgumentError(fmt::format("no class weight for '{}'", label));
}

std::vector<double> ClassWeights::dense(std::span<const std::string> labels) const {
  std::vector<double> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(at(l));
  return out;
}

ClassWeights compute_class_weights(const ClassCounts& counts) {
  if (counts.counts.empty()) throw ArgumentError("class weights need at least one class");
  for (std::size_t i = 0; i < counts.counts.size(); ++i) {
    const auto& [label, n] = counts.counts[i];
    if (n <= 0) throw ArgumentError(fmt::format("class '{}' has count {}; counts must be positive", label, n));
    for (std::size_t j = 0; j < i; ++j) {
      if (counts.counts[j].first == label) throw ArgumentError(fmt::format("class '{}' listed twice", label));
    }
  }
  const double total = static_cast<double>(counts.total());
  const double k = static_cast<double>(counts.counts.size());
  ClassWeights w;
  for (const auto& [label, n] : counts.counts) w.weights.emplace_back(label, total / (k * static_cast<double>(n)));
  return w;
}

ClassCounts count_classes(const SplitManifest& manifest, Split split) {
  ClassCounts out;
  for (CellClass c : all_classes()) out.counts.emplace_back(std::string(class_name(c)), 0);
  for (const auto& r : manifest.records) {
    if (r.split == split) ++out.counts[static_cast<std::size_t>(r.label)].second;
  }
  return out;
}

}  // namespace cytoxai
