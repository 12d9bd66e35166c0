#include "cytoxai/evaluation.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "cytoxai/diagnostics.hpp"
#include "cytoxai/error.hpp"

namespace cytoxai {

ConfusionMatrix::ConfusionMatrix(int classes) : k_(classes), counts_(static_cast<std::size_t>(classes) * classes) {
  if (classes < 0) throw ArgumentError("negative class count");
}

std::int64_t& ConfusionMatrix::at(int t, int p) {
  if (t < 0 || t >= k_ || p < 0 || p >= k_) throw ArgumentError(fmt::format("cell ({}, {}) outside {}x{}", t, p, k_, k_));
  return counts_[static_cast<std::size_t>(t) * k_ + p];
}

std::int64_t ConfusionMatrix::at(int t, int p) const { return const_cast<ConfusionMatrix*>(this)->at(t, p); }

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (auto v : counts_) n += v;
  return n;
}

std::int64_t ConfusionMatrix::row_sum(int c) const {
  std::int64_t n = 0;
  for (int p = 0; p < k_; ++p) n += at(c, p);
  return n;
}

std::int64_t ConfusionMatrix::col_sum(int c) const {
  std::int64_t n = 0;
  for (int t = 0; t < k_; ++t) n += at(t, c);
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int classes) {
  if (truth.size() != predicted.size()) {
    throw ArgumentError(fmt::format("{} true labels but {} predictions", truth.size(), predicted.size()));
  }
  if (classes < 1) throw ArgumentError("need at least one class");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes) {
      throw ArgumentError(fmt::format("label pair ({}, {}) at index {} outside [0, {})", truth[i], predicted[i], i,
                                      classes));
    }
    ++cm.at(truth[i], predicted[i]);
  }
  return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm, bool warn_undefined) {
  const std::int64_t total = cm.total();
  if (cm.classes() < 1 || total <= 0) throw ArgumentError("cannot compute metrics of an empty confusion matrix");
  MetricsReport r;
  r.total = total;
  r.confusion = cm;
  std::int64_t trace = 0;
  for (int c = 0; c < cm.classes(); ++c) {
    ClassMetrics m;
    const std::int64_t tp = cm.at(c, c), row = cm.row_sum(c), col = cm.col_sum(c);
    trace += tp;
    m.support = row;
    if (col > 0) {
      m.precision = double(tp) / double(col);
    } else if (row > 0 && warn_undefined) {
      warn(fmt::format("class {} was never predicted; its precision is reported as 0", c));
    }
    if (row > 0) m.recall = double(tp) / double(row);
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.weighted_precision += double(row) * m.precision;
    r.weighted_recall += double(row) * m.recall;
    r.weighted_f1 += double(row) * m.f1;
    r.per_class.push_back(m);
  }
  r.weighted_precision /= double(total);
  r.weighted_recall /= double(total);
  r.weighted_f1 /= double(total);
  r.accuracy = double(trace) / double(total);
  return r;
}

namespace {

void check_render_input(std::span<const NamedReport> reports, std::span<const std::string> names) {
  if (names.empty()) throw ArgumentError("report needs class names");
  if (reports.empty()) throw ArgumentError("report needs at least one result");
  for (const auto& r : reports) {
    if (r.report.per_class.size() != names.size()) {
      throw ArgumentError(fmt::format("{} has {} classes, {} names given", r.model, r.report.per_class.size(),
                                      names.size()));
    }
  }
}

std::size_t best_index(std::span<const NamedReport> reports) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].report.accuracy > reports[best].report.accuracy) best = i;
  }
  return best;
}

}  // namespace

std::string render_report_text(std::span<const NamedReport> reports, std::span<const std::string> names) {
  check_render_input(reports, names);
  std::size_t model_w = 10, class_w = 12;
  for (const auto& r : reports) model_w = std::max(model_w, r.model.size());
  for (const auto& n : names) class_w = std::max(class_w, n.size());
  const std::size_t best = best_index(reports);
  const std::string rule(model_w + class_w + 44, '-');
  std::string out = fmt::format("{:<{}}  {:<{}}  {:>9}  {:>9}  {:>9}  {:>10}\n", "Classifier", model_w, "Class", class_w,
                                "Precision", "Recall", "F1", "Accuracy");
  out += rule + "\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& rep = reports[i].report;
    const std::string acc = fmt::format("{:.2f}%{}", 100.0 * rep.accuracy, i == best ? "*" : " ");
    for (std::size_t c = 0; c < names.size(); ++c) {
      const auto& m = rep.per_class[c];
      out += fmt::format("{:<{}}  {:<{}}  {:>9.2f}  {:>9.2f}  {:>9.2f}  {:>10}\n", c == 0 ? reports[i].model : "",
                         model_w, names[c], class_w, m.precision, m.recall, m.f1, c == 0 ? acc : "");
    }
    out += fmt::format("{:<{}}  {:<{}}  {:>9.2f}  {:>9.2f}  {:>9.2f}  {:>10}\n", "", model_w, "weighted", class_w,
                       rep.weighted_precision, rep.weighted_recall, rep.weighted_f1, "");
    out += rule + "\n";
  }
  out += "* best accuracy\n";
  return out;
}

std::string render_report_csv(std::span<const NamedReport> reports, std::span<const std::string> names) {
  check_render_input(reports, names);
  const std::size_t best = best_index(reports);
  std::string out = "classifier,class,precision,recall,f1,support,accuracy,best\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& rep = reports[i].report;
    for (std::size_t c = 0; c < names.size(); ++c) {
      const auto& m = rep.per_class[c];
      out += fmt::format("{},{},{:.2f},{:.2f},{:.2f},{},{:.2f},{}\n", reports[i].model, names[c], m.precision, m.recall,
                         m.f1, m.support, 100.0 * rep.accuracy, i == best ? 1 : 0);
    }
    out += fmt::format("{},weighted,{:.2f},{:.2f},{:.2f},{},{:.2f},{}\n", reports[i].model, rep.weighted_precision,
                       rep.weighted_recall, rep.weighted_f1, rep.total, 100.0 * rep.accuracy, i == best ? 1 : 0);
  }
  return out;
}

nlohmann::json metrics_to_json(const MetricsReport& r, std::span<const std::string> names) {
  if (names.size() != r.per_class.size()) throw ArgumentError("class name count does not match the report");
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto& m = r.per_class[c];
    per_class.push_back(
        {{"class", names[c]}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}});
  }
  nlohmann::json cm = nlohmann::json::array();
  for (int t = 0; t < r.confusion.classes(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int p = 0; p < r.confusion.classes(); ++p) row.push_back(r.confusion.at(t, p));
    cm.push_back(row);
  }
  return {{"accuracy", r.accuracy},
          {"weighted_precision", r.weighted_precision},
          {"weighted_recall", r.weighted_recall},
          {"weighted_f1", r.weighted_f1},
          {"total", r.total},
          {"per_class", per_class},
          {"confusion_matrix", cm}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  const auto& rows = j.at("confusion_matrix");
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (int t = 0; t < cm.classes(); ++t) {
    for (int p = 0; p < cm.classes(); ++p) cm.at(t, p) = rows.at(t).at(p).get<std::int64_t>();
  }
  return compute_metrics(cm, false);
}

}  // namespace cytoxai
