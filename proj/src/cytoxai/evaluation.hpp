#pragma once

#include <cstdint>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

namespace cytoxai {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0);

  int classes() const { return k_; }
  std::int64_t& at(int truth, int predicted);
  std::int64_t at(int truth, int predicted) const;
  std::int64_t total() const;
  std::int64_t row_sum(int c) const;
  std::int64_t col_sum(int c) const;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int classes);

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::int64_t support = 0;
};

struct MetricsReport {
  double accuracy = 0;
  std::vector<ClassMetrics> per_class;
  // Support-weighted means of the per-class values.
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  std::int64_t total = 0;
  ConfusionMatrix confusion;
};

// Undefined ratios (empty row or column) count as 0 and emit a warning unless
// `warn_undefined` is false.
MetricsReport compute_metrics(const ConfusionMatrix& cm, bool warn_undefined = true);

struct NamedReport {
  std::string model;
  MetricsReport report;
};

// One block per model: a row per class plus the weighted row, accuracy as a
// percentage; the best accuracy is marked with '*'. Values rounded to 2 places.
std::string render_report_text(std::span<const NamedReport> reports, std::span<const std::string> class_names);
std::string render_report_csv(std::span<const NamedReport> reports, std::span<const std::string> class_names);

nlohmann::json metrics_to_json(const MetricsReport& report, std::span<const std::string> class_names);
// Recomputes from the stored confusion matrix without warnings.
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace cytoxai
