#include "cytoxai/losses.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "cytoxai/diagnostics.hpp"
#include "cytoxai/error.hpp"

namespace cytoxai {

namespace {

void check_labels(Eigen::Index rows, std::span<const int> labels, const char* what) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw ArgumentError(fmt::format("{}: {} rows but {} labels", what, rows, labels.size()));
  }
  if (rows == 0) throw ArgumentError(fmt::format("{}: empty batch", what));
}

// Incremental mean; exact when all terms are equal.
class RunningMean {
 public:
  void add(double x) { mean_ += (x - mean_) / static_cast<double>(++n_); }
  double value() const { return mean_; }

 private:
  double mean_ = 0.0;
  std::size_t n_ = 0;
};

// For each row, the next row with the same label in cyclic batch order, or -1.
std::vector<int> next_same_class(std::span<const int> labels) {
  const int n = static_cast<int>(labels.size());
  std::vector<int> out(n, -1);
  for (int i = 0; i < n; ++i) {
    for (int step = 1; step < n; ++step) {
      const int j = (i + step) % n;
      if (labels[j] == labels[i]) {
        out[i] = j;
        break;
      }
    }
  }
  return out;
}

std::vector<int> next_other_class(std::span<const int> labels) {
  const int n = static_cast<int>(labels.size());
  std::vector<int> out(n, -1);
  for (int i = 0; i < n; ++i) {
    for (int step = 1; step < n; ++step) {
      const int j = (i + step) % n;
      if (labels[j] != labels[i]) {
        out[i] = j;
        break;
      }
    }
  }
  return out;
}

LossValue weighted_log_loss_impl(const RowMatrix& probs, std::span<const int> labels,
                                 std::span<const double> class_weights, const char* what) {
  check_labels(probs.rows(), labels, what);
  const auto n = static_cast<double>(probs.rows());
  LossValue out;
  out.grad = RowMatrix::Zero(probs.rows(), probs.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= probs.cols()) throw ArgumentError(fmt::format("{}: label {} out of range", what, y));
    double w = 1.0;
    if (!class_weights.empty()) {
      if (y >= static_cast<int>(class_weights.size())) {
        throw ArgumentError(fmt::format("{}: no class weight for class {}", what, y));
      }
      w = class_weights[y];
    }
    const double p = probs(i, y);
    const double clipped = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    total += -w * std::log(clipped);
    if (p == clipped) out.grad(i, y) = -w / (n * p);
  }
  out.value = total / n;
  return out;
}

}  // namespace

LossValue log_loss(const RowMatrix& probs, std::span<const int> labels) {
  return weighted_log_loss_impl(probs, labels, {}, "log_loss");
}

LossValue weighted_log_loss(const RowMatrix& probs, std::span<const int> labels,
                            std::span<const double> class_weights) {
  if (class_weights.empty()) throw ArgumentError("weighted_log_loss: no class weights given");
  return weighted_log_loss_impl(probs, labels, class_weights, "weighted_log_loss");
}

LossValue softmax_cross_entropy(const RowMatrix& logits, std::span<const int> labels,
                                std::span<const double> class_weights) {
  check_labels(logits.rows(), labels, "softmax_cross_entropy");
  const auto n = static_cast<double>(logits.rows());
  LossValue out;
  out.grad.resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) throw ArgumentError(fmt::format("softmax_cross_entropy: label {} out of range", y));
    double w = 1.0;
    if (!class_weights.empty()) {
      if (y >= static_cast<int>(class_weights.size())) {
        throw ArgumentError(fmt::format("softmax_cross_entropy: no class weight for class {}", y));
      }
      w = class_weights[y];
    }
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
    const double z = e.sum();
    total += w * (std::log(z) - (logits(i, y) - m));
    out.grad.row(i) = (w / n) * (e / z);
    out.grad(i, y) -= w / n;
  }
  out.value = total / n;
  return out;
}

LossValue npairs_tuple_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& p, const RowMatrix& negatives) {
  const Eigen::Index d = a.size();
  if (p.size() != d || (negatives.rows() > 0 && negatives.cols() != d)) {
    throw ArgumentError("npairs_tuple_loss: dimension mismatch");
  }
  const Eigen::Index k = negatives.rows();
  // log(1 + sum exp(x_k)) as a log-sum-exp over {0, x_1..x_k}.
  Eigen::VectorXd x = negatives * a - Eigen::VectorXd::Constant(k, a.dot(p));
  const double m = std::max(0.0, k ? x.maxCoeff() : 0.0);
  const Eigen::VectorXd e = (x.array() - m).exp().matrix();
  const double z = std::exp(-m) + e.sum();
  LossValue out;
  out.value = m + std::log(z);
  const Eigen::VectorXd s = e / z;  // d loss / d x_k
  out.grad = RowMatrix::Zero(2 + k, d);
  const double s_total = s.sum();
  out.grad.row(0) = (negatives.transpose() * s - s_total * p).transpose();
  out.grad.row(1) = -s_total * a.transpose();
  for (Eigen::Index j = 0; j < k; ++j) out.grad.row(2 + j) = s(j) * a.transpose();
  return out;
}

LossValue multiclass_npairs_loss(const RowMatrix& z, std::span<const int> labels) {
  check_labels(z.rows(), labels, "multiclass_npairs_loss");
  const auto n = static_cast<int>(z.rows());
  const auto positive = next_same_class(labels);
  for (int i = 0; i < n; ++i) {
    if (positive[i] < 0) {
      throw ArgumentError(fmt::format("multiclass_npairs_loss: class {} has a single member in the batch, so its "
                                      "anchor has no positive",
                                      labels[i]));
    }
  }
  LossValue out;
  out.grad = RowMatrix::Zero(z.rows(), z.cols());
  if (std::all_of(labels.begin(), labels.end(), [&](int y) { return y == labels[0]; })) {
    warn("multiclass_npairs_loss: batch holds a single class, no negatives; loss is 0");
    return out;
  }
  const RowMatrix gram = z * z.transpose();
  RunningMean mean;
  for (int i = 0; i < n; ++i) {
    const int j = positive[i];
    std::vector<int> neg;
    for (int k = 0; k < n; ++k) {
      if (labels[k] != labels[i]) neg.push_back(k);
    }
    Eigen::VectorXd x(neg.size());
    for (std::size_t t = 0; t < neg.size(); ++t) x(t) = gram(i, neg[t]) - gram(i, j);
    const double m = std::max(0.0, x.maxCoeff());
    const Eigen::VectorXd e = (x.array() - m).exp().matrix();
    const double zsum = std::exp(-m) + e.sum();
    mean.add(m + std::log(zsum));
    const Eigen::VectorXd s = e / (zsum * n);
    for (std::size_t t = 0; t < neg.size(); ++t) {
      const int k = neg[t];
      out.grad.row(i) += s(t) * (z.row(k) - z.row(j));
      out.grad.row(k) += s(t) * z.row(i);
      out.grad.row(j) -= s(t) * z.row(i);
    }
  }
  out.value = mean.value();
  return out;
}

LossValue supervised_ntxent_loss(const RowMatrix& z, std::span<const int> labels, double temperature) {
  check_labels(z.rows(), labels, "supervised_ntxent_loss");
  if (!(temperature > 0)) throw ArgumentError("supervised_ntxent_loss: temperature must be positive");
  const auto n = static_cast<int>(z.rows());
  if (n < 2) throw ArgumentError("supervised_ntxent_loss: need at least two embeddings");
  const RowMatrix s = (z * z.transpose()) / temperature;
  // dL/ds accumulated, then chained through s = z z^T / tau.
  RowMatrix ds = RowMatrix::Zero(n, n);
  RunningMean mean;
  for (int i = 0; i < n; ++i) {
    std::vector<int> pos;
    double m = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < n; ++a) {
      if (a == i) continue;
      m = std::max(m, s(i, a));
      if (labels[a] == labels[i]) pos.push_back(a);
    }
    if (pos.empty()) {
      throw ArgumentError(fmt::format("supervised_ntxent_loss: class {} has a single member in the batch",
                                      labels[i]));
    }
    double zsum = 0.0;
    for (int a = 0; a < n; ++a) {
      if (a != i) zsum += std::exp(s(i, a) - m);
    }
    // -1/|P| sum_p [ (s_ip - m) - log zsum ]; positives measured from m keep ties exact.
    double pos_mean = 0.0;
    for (int p : pos) pos_mean += s(i, p) - m;
    pos_mean /= static_cast<double>(pos.size());
    mean.add(std::log(zsum) - pos_mean);
    const double inv_n = 1.0 / n;
    for (int a = 0; a < n; ++a) {
      if (a != i) ds(i, a) += inv_n * std::exp(s(i, a) - m) / zsum;
    }
    for (int p : pos) ds(i, p) -= inv_n / static_cast<double>(pos.size());
  }
  LossValue out;
  out.value = mean.value();
  out.grad = ((ds + ds.transpose()) * z) / temperature;
  return out;
}

LossValue triplet_margin_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& p, const Eigen::VectorXd& n,
                              double margin) {
  if (p.size() != a.size() || n.size() != a.size()) throw ArgumentError("triplet_margin_loss: dimension mismatch");
  if (margin < 0) throw ArgumentError("triplet_margin_loss: margin must be nonnegative");
  const Eigen::VectorXd ap = a - p, an = a - n;
  const double dp = ap.norm(), dn = an.norm();
  LossValue out;
  out.grad = RowMatrix::Zero(3, a.size());
  const double v = dp - dn + margin;
  if (v <= 0) return out;
  out.value = v;
  // Subgradient 0 where a distance vanishes.
  const Eigen::VectorXd up = dp > 1e-12 ? Eigen::VectorXd(ap / dp) : Eigen::VectorXd::Zero(a.size());
  const Eigen::VectorXd un = dn > 1e-12 ? Eigen::VectorXd(an / dn) : Eigen::VectorXd::Zero(a.size());
  out.grad.row(0) = (up - un).transpose();
  out.grad.row(1) = -up.transpose();
  out.grad.row(2) = un.transpose();
  return out;
}

LossValue batch_triplet_loss(const RowMatrix& z, std::span<const int> labels, double margin) {
  check_labels(z.rows(), labels, "batch_triplet_loss");
  const auto n = static_cast<int>(z.rows());
  const auto positive = next_same_class(labels);
  const auto negative = next_other_class(labels);
  LossValue out;
  out.grad = RowMatrix::Zero(z.rows(), z.cols());
  RunningMean mean;
  for (int i = 0; i < n; ++i) {
    if (positive[i] < 0) {
      throw ArgumentError(fmt::format("batch_triplet_loss: class {} has a single member in the batch", labels[i]));
    }
    if (negative[i] < 0) throw ArgumentError("batch_triplet_loss: batch holds a single class");
    const LossValue t = triplet_margin_loss(z.row(i).transpose(), z.row(positive[i]).transpose(),
                                            z.row(negative[i]).transpose(), margin);
    mean.add(t.value);
    out.grad.row(i) += t.grad.row(0) / n;
    out.grad.row(positive[i]) += t.grad.row(1) / n;
    out.grad.row(negative[i]) += t.grad.row(2) / n;
  }
  out.value = mean.value();
  return out;
}

std::string_view contrastive_loss_name(ContrastiveLoss loss) {
  switch (loss) {
    case ContrastiveLoss::npairs: return "npairs";
    case ContrastiveLoss::ntxent: return "ntxent";
    case ContrastiveLoss::triplet: return "triplet";
  }
  return "?";
}

ContrastiveLoss parse_contrastive_loss(std::string_view name) {
  for (auto l : {ContrastiveLoss::npairs, ContrastiveLoss::ntxent, ContrastiveLoss::triplet}) {
    if (contrastive_loss_name(l) == name) return l;
  }
  throw ArgumentError(fmt::format("unknown contrastive loss '{}' (expected npairs, ntxent or triplet)", name));
}

bool has_positive_pairs(std::span<const int> labels) {
  std::map<int, int> counts;
  for (int y : labels) ++counts[y];
  if (counts.size() < 2) return false;
  return std::all_of(counts.begin(), counts.end(), [](const auto& kv) { return kv.second >= 2; });
}

}  // namespace cytoxai
