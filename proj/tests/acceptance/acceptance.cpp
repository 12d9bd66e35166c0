// Acceptance runner: one PASS/FAIL line per criterion. Every expected value is
// computed here from first principles, not read back from the library.
//
// Usage: cytoxai_acceptance [criterion ...]   (default: all)

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cytoxai/class_weights.hpp"
#include "cytoxai/config.hpp"
#include "cytoxai/dataset.hpp"
#include "cytoxai/diagnostics.hpp"
#include "cytoxai/evaluation.hpp"
#include "cytoxai/explain.hpp"
#include "cytoxai/losses.hpp"
#include "cytoxai/random.hpp"
#include "cytoxai/training.hpp"
#include "toy_data.hpp"

using namespace cytoxai;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

RowMatrix random_matrix(int rows, int cols, Rng& rng) {
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

RowMatrix normalized_rows(RowMatrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

// Rows on the simplex; `spread` > 1 pushes mass towards one component.
RowMatrix random_probs(int rows, int cols, Rng& rng, double spread = 1.0) {
  RowMatrix p(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) p(i, j) = std::pow(0.02 + rng.uniform(), spread);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

std::vector<int> random_labels(int n, int classes, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

// Every class present at least twice.
std::vector<int> paired_labels(int n, int classes, Rng& rng) {
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i < 2 * classes ? i / 2 : static_cast<int>(rng.below(classes));
  rng.shuffle(y.begin(), y.end());
  return y;
}

double central_difference_error(const RowMatrix& x, const RowMatrix& analytic,
                                const std::function<double(const RowMatrix&)>& f) {
  const double h = 1e-5;
  double worst = 0;
  RowMatrix probe = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      probe(i, j) = x(i, j) + h;
      const double up = f(probe);
      probe(i, j) = x(i, j) - h;
      const double down = f(probe);
      probe(i, j) = x(i, j);
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(analytic(i, j)), 1e-3});
      worst = std::max(worst, std::abs(numeric - analytic(i, j)) / scale);
    }
  }
  return worst;
}

std::vector<std::string> class_labels() {
  std::vector<std::string> names;
  for (CellClass c : all_classes()) names.emplace_back(class_name(c));
  return names;
}

// ------------------------------------------------------------------ 1

Outcome class_weight_reproduction() {
  const std::array<std::int64_t, 5> counts{815, 825, 795, 790, 835};
  const std::array<const char*, 5> published{"0.996319018404908", "0.9842424242424243", "1.0213836477987421",
                                             "1.0278481012658227", "0.9724550898203593"};
  const std::int64_t n = std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
  bool ok = n == 4060 && n % 5 == 0 && n / 5 == 812;
  double identity = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    identity = std::max(identity, std::abs(std::strtod(published[c], nullptr) * double(counts[c]) - 812.0));
  }
  ok = ok && identity < 1e-9;

  ClassCounts cc;
  const auto names = class_labels();
  for (std::size_t c = 0; c < 5; ++c) cc.counts.emplace_back(names[c], counts[c]);
  const auto w = compute_class_weights(cc).dense(names);
  double err = 0;
  std::string printed;
  for (std::size_t c = 0; c < 5; ++c) {
    err = std::max(err, std::abs(w[c] - std::strtod(published[c], nullptr)));
    printed += fmt::format("{}{}", c ? " " : "", w[c]);
  }
  ok = ok && err < 1e-12;
  return {ok, fmt::format("N={} N/K={} max|w*n-812|={:.1e} max|w-published|={:.1e} weights: {}", n, n / 5, identity,
                          err, printed)};
}

// ------------------------------------------------------------------ 2

Outcome loss_reduction_identity() {
  Rng rng(2002);
  double worst_unit = 0;
  for (int b = 0; b < 100; ++b) {
    const int n = 1 + static_cast<int>(rng.below(32)), k = 2 + static_cast<int>(rng.below(5));
    const RowMatrix p = random_probs(n, k, rng, 1.0 + 4.0 * rng.uniform());
    const auto y = random_labels(n, k, rng);
    const std::vector<double> ones(k, 1.0);
    worst_unit = std::max(worst_unit, std::abs(weighted_log_loss(p, y, ones).value - log_loss(p, y).value));
  }

  // Two-class form: (1/N) sum -[w0 y log q + w1 (1 - y) log(1 - q)], with q the
  // probability of the positive class (column 1, weight w0).
  int negative = 0;
  double worst_binary = 0, smallest = INFINITY;
  for (int b = 0; b < 1000; ++b) {
    const int n = 1 + static_cast<int>(rng.below(64));
    const int k = b % 2 == 0 ? 2 : 2 + static_cast<int>(rng.below(5));
    RowMatrix p = random_probs(n, k, rng, 1.0 + 8.0 * rng.uniform());
    // Two-class rows are (1 - q, q) so both forms read the same numbers.
    if (k == 2) p.col(0) = 1.0 - p.col(1).array();
    const auto y = random_labels(n, k, rng);
    std::vector<double> w(k);
    for (auto& v : w) v = 0.05 + 3.0 * rng.uniform();
    const double value = weighted_log_loss(p, y, w).value;
    smallest = std::min(smallest, value);
    if (!(value >= 0.0)) ++negative;
    if (k == 2) {
      double oracle = 0;
      for (int i = 0; i < n; ++i) {
        const double q = p(i, 1);
        const double yi = y[i] == 1 ? 1.0 : 0.0;
        const double log_q = std::log(std::clamp(q, kProbabilityClamp, 1 - kProbabilityClamp));
        const double log_not_q = std::log(std::clamp(1 - q, kProbabilityClamp, 1 - kProbabilityClamp));
        oracle += -(w[1] * yi * log_q + w[0] * (1 - yi) * log_not_q);
      }
      oracle /= n;
      worst_binary = std::max(worst_binary, std::abs(oracle - value) / std::max(1.0, std::abs(oracle)));
    }
  }
  const bool ok = worst_unit <= 1e-12 && negative == 0 && worst_binary < 1e-12;
  return {ok, fmt::format("unit-weight max diff {:.1e} over 100 batches; 1000 weighted batches: {} negative, min {:.3e}, "
                          "two-class form max rel diff {:.1e}",
                          worst_unit, negative, smallest, worst_binary)};
}

// ------------------------------------------------------------------ 3

Outcome gradient_checks() {
  Rng rng(3003);
  double ce = 0, ce_logits = 0, npairs = 0, tuple = 0, ntxent = 0, triplet = 0, triplet_single = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(5)), d = 2 + static_cast<int>(rng.below(15));
    const int classes = 2 + static_cast<int>(rng.below(n / 2 - 1));
    const auto y = paired_labels(n, classes, rng);
    std::vector<double> w(classes);
    for (auto& v : w) v = 0.3 + 1.5 * rng.uniform();

    const RowMatrix p = random_probs(n, classes, rng);
    ce = std::max(ce, central_difference_error(p, weighted_log_loss(p, y, w).grad, [&](const RowMatrix& x) {
                    return weighted_log_loss(x, y, w).value;
                  }));
    const RowMatrix logits = random_matrix(n, classes, rng);
    ce_logits = std::max(ce_logits, central_difference_error(logits, softmax_cross_entropy(logits, y, w).grad,
                                                             [&](const RowMatrix& x) {
                                                               return softmax_cross_entropy(x, y, w).value;
                                                             }));

    const RowMatrix z = normalized_rows(random_matrix(n, d, rng));
    npairs = std::max(npairs, central_difference_error(z, multiclass_npairs_loss(z, y).grad, [&](const RowMatrix& x) {
                        return multiclass_npairs_loss(x, y).value;
                      }));
    const double tau = 0.2 + rng.uniform();
    ntxent = std::max(ntxent, central_difference_error(z, supervised_ntxent_loss(z, y, tau).grad,
                                                       [&](const RowMatrix& x) {
                                                         return supervised_ntxent_loss(x, y, tau).value;
                                                       }));
    const RowMatrix zt = random_matrix(n, d, rng);
    triplet = std::max(triplet, central_difference_error(zt, batch_triplet_loss(zt, y, 1.0).grad,
                                                         [&](const RowMatrix& x) {
                                                           return batch_triplet_loss(x, y, 1.0).value;
                                                         }));

    const RowMatrix t = random_matrix(5, d, rng);
    auto tuple_value = [](const RowMatrix& x) {
      return npairs_tuple_loss(x.row(0).transpose(), x.row(1).transpose(), x.bottomRows(3));
    };
    tuple = std::max(tuple, central_difference_error(t, tuple_value(t).grad,
                                                     [&](const RowMatrix& x) { return tuple_value(x).value; }));
    // Active triplet: negative closer than the positive.
    RowMatrix apn = random_matrix(3, d, rng);
    apn.row(2) = apn.row(0) + 0.1 * apn.row(2);
    auto single = [](const RowMatrix& x) {
      return triplet_margin_loss(x.row(0).transpose(), x.row(1).transpose(), x.row(2).transpose(), 1.0);
    };
    triplet_single = std::max(triplet_single, central_difference_error(apn, single(apn).grad, [&](const RowMatrix& x) {
                                return single(x).value;
                              }));
  }
  const double worst = std::max({ce, ce_logits, npairs, tuple, ntxent, triplet, triplet_single});
  return {worst < 1e-4,
          fmt::format("max relative error: weighted-CE {:.1e} (logits {:.1e}), n-pairs {:.1e} (tuple {:.1e}), "
                      "NT-Xent {:.1e}, triplet {:.1e} (single {:.1e}); 40 batches, B<=8, d<=16, h=1e-5",
                      ce, ce_logits, npairs, tuple, ntxent, triplet, triplet_single)};
}

// ------------------------------------------------------------------ 4

Outcome contrastive_hand_oracles() {
  Eigen::VectorXd a(2), p(2);
  a << 1, 0;
  p << 1, 0;
  RowMatrix neg(1, 2);
  neg << 0, 1;
  // log(1 + exp(a.n - a.p)) = log(1 + e^-1).
  const double npairs = npairs_tuple_loss(a, p, neg).value;
  const double npairs_err = std::abs(npairs - std::log(1.0 + std::exp(-1.0)));

  // +e1, +e2 (class 0), -e1, -e2 (class 1), tau = 1. Each anchor has one
  // positive at similarity 0 and three others at 0, 0, -1 in the denominator:
  // -log(e^0 / (e^0 + e^0 + e^-1)) = log(2 + e^-1), identical for all four.
  RowMatrix z(4, 2);
  z << 1, 0, 0, 1, -1, 0, 0, -1;
  const int y[] = {0, 0, 1, 1};
  double hand = 0;
  for (int i = 0; i < 4; ++i) {
    double denom = 0;
    for (int k = 0; k < 4; ++k) {
      if (k != i) denom += std::exp(z.row(i).dot(z.row(k)));
    }
    for (int j = 0; j < 4; ++j) {
      if (j != i && y[j] == y[i]) hand += -std::log(std::exp(z.row(i).dot(z.row(j))) / denom);
    }
  }
  hand /= 4;
  const double ntxent = supervised_ntxent_loss(z, y, 1.0).value;
  const double ntxent_err = std::max(std::abs(ntxent - hand), std::abs(ntxent - std::log(2 + std::exp(-1.0))));

  int exact = 0, tried = 0;
  for (int b = 2; b <= 64; ++b) {
    Rng rng(b);
    Eigen::RowVectorXd v = random_matrix(1, 9, rng).row(0).normalized();
    RowMatrix same(b, 9);
    for (int i = 0; i < b; ++i) same.row(i) = v;
    const std::vector<int> one(b, 3);
    ++tried;
    if (supervised_ntxent_loss(same, one, 0.1).value == std::log(double(b - 1))) ++exact;
  }
  const bool ok = npairs_err <= 1e-9 && ntxent_err <= 1e-6 && exact == tried;
  return {ok, fmt::format("n-pairs {:.12f} (err {:.1e}); NT-Xent {:.12f} vs hand {:.12f} (err {:.1e}); "
                          "identical batch == log(B-1) exactly for {}/{} sizes B=2..64",
                          npairs, npairs_err, ntxent, hand, ntxent_err, exact, tried)};
}

// ------------------------------------------------------------------ 5

struct BruteMetrics {
  std::vector<double> precision, recall, f1;
  double accuracy = 0, wp = 0, wr = 0, wf = 0;
};

// Counts over explicit label pairs rather than matrix cells.
BruteMetrics brute_force_metrics(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
  BruteMetrics m;
  const double n = double(truth.size());
  double hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == pred[i];
  m.accuracy = hits / n;
  for (int c = 0; c < k; ++c) {
    double tp = 0, predicted = 0, support = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += truth[i] == c && pred[i] == c;
      predicted += pred[i] == c;
      support += truth[i] == c;
    }
    const double pr = predicted > 0 ? tp / predicted : 0.0;
    const double rc = support > 0 ? tp / support : 0.0;
    const double f = pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0;
    m.precision.push_back(pr);
    m.recall.push_back(rc);
    m.f1.push_back(f);
    m.wp += support / n * pr;
    m.wr += support / n * rc;
    m.wf += support / n * f;
  }
  return m;
}

Outcome metrics_oracle() {
  const auto previous = set_warning_sink([](const std::string&) {});
  Rng rng(5005);
  double worst = 0, worst_identity = 0;
  int sparse = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    const int total = 1 + static_cast<int>(rng.below(500));
    // Skewed cell probabilities so some rows and columns come out empty.
    std::vector<double> cell(k * k);
    for (auto& v : cell) v = rng.bernoulli(0.3) ? 0.0 : std::pow(rng.uniform(), 3.0);
    cell[rng.below(cell.size())] += 0.1;
    std::discrete_distribution<int> pick(cell.begin(), cell.end());
    std::mt19937_64 engine(rng.next());
    std::vector<int> truth, pred;
    for (int i = 0; i < total; ++i) {
      const int c = pick(engine);
      truth.push_back(c / k);
      pred.push_back(c % k);
    }
    const MetricsReport r = compute_metrics(confusion_matrix(truth, pred, k));
    const BruteMetrics b = brute_force_metrics(truth, pred, k);
    for (int c = 0; c < k; ++c) {
      worst = std::max({worst, std::abs(r.per_class[c].precision - b.precision[c]),
                        std::abs(r.per_class[c].recall - b.recall[c]), std::abs(r.per_class[c].f1 - b.f1[c])});
      if (r.per_class[c].support == 0 || b.precision[c] == 0) ++sparse;
    }
    worst = std::max({worst, std::abs(r.accuracy - b.accuracy), std::abs(r.weighted_precision - b.wp),
                      std::abs(r.weighted_recall - b.wr), std::abs(r.weighted_f1 - b.wf)});
    worst_identity = std::max(worst_identity, std::abs(r.weighted_recall - r.accuracy));
  }
  set_warning_sink(previous);
  const bool ok = worst <= 1e-9 && worst_identity <= 1e-9;
  return {ok, fmt::format("100 matrices (K 2..6, totals 1..500, {} empty/zero-precision classes): max diff {:.1e}, "
                          "max |weighted recall - accuracy| {:.1e}",
                          sparse, worst, worst_identity)};
}

// ------------------------------------------------------------------ 6

std::vector<ImageRecord> synthetic_records(const std::array<int, kNumClasses>& per_class) {
  std::vector<ImageRecord> records;
  for (int c = 0; c < kNumClasses; ++c) {
    const CellClass label = all_classes()[c];
    for (int i = 0; i < per_class[c]; ++i) {
      ImageRecord r;
      r.id = fmt::format("{}/{:04d}", class_name(label), i);
      r.path = r.id + ".bmp";
      r.label = label;
      r.width = r.height = 110;
      records.push_back(std::move(r));
    }
  }
  return records;
}

Outcome split_fidelity() {
  // Published per-class figures in class order (Dyskeratotic, Koilocytotic,
  // Metaplastic, Parabasal, Superficial-Intermediate) scaled to 4049 with
  // largest remainders.
  const std::array<int, kNumClasses> published{813, 825, 793, 727, 813};
  const int target = 4049;
  const int sum = std::accumulate(published.begin(), published.end(), 0);
  std::array<int, kNumClasses> scaled{};
  std::array<double, kNumClasses> remainder{};
  int assigned = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double exact = double(published[c]) * target / sum;
    scaled[c] = static_cast<int>(std::floor(exact));
    remainder[c] = exact - scaled[c];
    assigned += scaled[c];
  }
  std::array<int, kNumClasses> order{0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int i = 0; i < target - assigned; ++i) ++scaled[order[i]];

  const std::array<long, 3> expected{2589, 648, 812};
  bool ok = true;
  std::string splits;
  std::array<std::size_t, 3> counts{};
  for (std::uint64_t seed : {0ull, 1ull, 42ull}) {
    const SplitManifest m = stratified_split(synthetic_records(scaled), SplitRatios{}, seed);
    counts = m.split_counts();
    for (int s = 0; s < 3; ++s) ok = ok && std::abs(long(counts[s]) - expected[s]) <= 3;
    ok = ok && counts[0] + counts[1] + counts[2] == std::size_t(target);
    if (seed == 0) splits = fmt::format("{}/{}/{}", counts[0], counts[1], counts[2]);
  }

  const auto kinds = RunConfig{}.augment_kinds;
  const SplitManifest split = stratified_split(synthetic_records(scaled), SplitRatios{}, 7);
  const SplitManifest augmented = augment_training_set(split, 6, kinds, false, 7);
  const auto before = split.split_counts(), after = augmented.split_counts();
  ok = ok && after[0] == 7 * before[0] && after[1] == before[1] && after[2] == before[2];

  // Same pipeline on a manifest holding exactly 2589 train originals.
  std::vector<ImageRecord> records = synthetic_records(scaled);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].split = i < 2589 ? Split::train : i < 2589 + 648 ? Split::val : Split::test;
  }
  SplitManifest fixed;
  fixed.records = std::move(records);
  const auto paper_sized = augment_training_set(fixed, 6, kinds, false, 11).split_counts();
  ok = ok && paper_sized[0] == 18123;

  return {ok, fmt::format("per-class {}/{}/{}/{}/{} -> split {} (target 2589/648/812 +-3); factor 6: train {} -> {} "
                          "(x{:.3f}); 2589 train originals -> {}",
                          scaled[0], scaled[1], scaled[2], scaled[3], scaled[4], splits, before[0], after[0],
                          double(after[0]) / double(before[0]), paper_sized[0])};
}

// ------------------------------------------------------------------ 7

ActivationStack stack_of(int k, int h, int w, std::vector<double> values) {
  ActivationStack a;
  a.maps = FeatureMaps(k, h, w);
  a.maps.data = std::move(values);
  return a;
}

GradientStack grads_of(int k, int h, int w, std::vector<double> values) {
  GradientStack g;
  g.maps = FeatureMaps(k, h, w);
  g.maps.data = std::move(values);
  return g;
}

// 64 x 64 noisy image with one strongly red square of side 12..20 at a
// random position.
struct PlantedSquare {
  static constexpr int kSize = 64, kCell = 4, kGrid = kSize / kCell;
  Image image{kSize, kSize};
  int x0 = 0, y0 = 0, side = 0;

  explicit PlantedSquare(std::uint64_t seed) {
    Rng rng(seed);
    side = 12 + static_cast<int>(rng.below(9));
    x0 = static_cast<int>(rng.below(kSize - side + 1));
    y0 = static_cast<int>(rng.below(kSize - side + 1));
    for (int y = 0; y < kSize; ++y) {
      for (int x = 0; x < kSize; ++x) {
        const bool in = inside(x, y);
        image.at(x, y, 0) = static_cast<float>(in ? rng.uniform(0.8, 1.0) : rng.uniform(0.0, 0.2));
        image.at(x, y, 1) = static_cast<float>(in ? rng.uniform(0.0, 0.1) : rng.uniform(0.1, 0.5));
        image.at(x, y, 2) = static_cast<float>(in ? rng.uniform(0.0, 0.1) : rng.uniform(0.1, 0.5));
      }
    }
  }
  bool inside(int x, int y) const { return x >= x0 && x < x0 + side && y >= y0 && y < y0 + side; }

  // Conv layer with 4 x 4 kernels, stride 4, then ReLU. Channel 0 responds to
  // red over green/blue, channel 1 to the opposite, channel 2 to brightness.
  static ActivationStack features(const Image& img) {
    ActivationStack a;
    a.maps = FeatureMaps(3, kGrid, kGrid);
    for (int gy = 0; gy < kGrid; ++gy) {
      for (int gx = 0; gx < kGrid; ++gx) {
        double rgb[3] = {0, 0, 0};
        for (int dy = 0; dy < kCell; ++dy) {
          for (int dx = 0; dx < kCell; ++dx) {
            for (int c = 0; c < 3; ++c) rgb[c] += img.at(gx * kCell + dx, gy * kCell + dy, c) / (kCell * kCell);
          }
        }
        const double redness = rgb[0] - 0.5 * (rgb[1] + rgb[2]);
        a.maps.at(0, gy, gx) = std::max(0.0, redness);
        a.maps.at(1, gy, gx) = std::max(0.0, -redness);
        a.maps.at(2, gy, gx) = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
      }
    }
    return a;
  }
  // Class score: a linear read-out of the detector maps.
  static constexpr std::array<double, 3> kWeights{1.0, -0.5, 0.0};
  static double score(const Image& img) {
    const auto a = features(img);
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      for (double v : a.maps.channel(c)) s += kWeights[c] * v;
    }
    return s;
  }
  // d score / d A_c is the constant kWeights[c].
  static GradientStack gradients() {
    GradientStack g;
    g.maps = FeatureMaps(3, kGrid, kGrid);
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < kGrid * kGrid; ++i) g.maps.data[c * kGrid * kGrid + i] = kWeights[c];
    }
    return g;
  }

  double mass_inside(const Heatmap& h) const {
    double in = 0, total = 0;
    for (int y = 0; y < h.height; ++y) {
      for (int x = 0; x < h.width; ++x) {
        total += h.at(x, y);
        if (inside(x, y)) in += h.at(x, y);
      }
    }
    return total > 0 ? in / total : 0.0;
  }
};

double brute_force_score_cam_gap(std::uint64_t seed) {
  nn::Network net;
  int x = net.add_input("input", {3, 24, 24});
  const int conv = net.add<nn::Conv2D>({x}, "conv", nn::Conv2DOptions{8, 3, 2, nn::Padding::same, true, true});
  x = net.add<nn::GlobalAvgPool>({conv}, "gap");
  x = net.add<nn::Dense>({x}, "logits", 3);
  net.set_output(x);
  net.initialize(seed);
  auto to_batch = [](std::span<const Image> images) {
    nn::Tensor t({static_cast<int>(images.size()), 3, 24, 24});
    for (std::size_t b = 0; b < images.size(); ++b) {
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 24; ++y) {
          for (int xx = 0; xx < 24; ++xx) t[((b * 3 + c) * 24 + y) * 24 + xx] = images[b].at(xx, y, c);
        }
      }
    }
    return t;
  };
  const ScorePredictor predictor = [&](std::span<const Image> images) {
    const nn::Tensor& out = net.forward(to_batch(images), false);
    RowMatrix m(out.dim(0), out.dim(1));
    for (std::size_t i = 0; i < out.size(); ++i) m.data()[i] = out[i];
    return m;
  };
  Rng rng(seed);
  Image img(24, 24);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  net.forward(to_batch(std::span<const Image>(&img, 1)), false);
  const nn::Tensor& a = net.value(conv);
  ActivationStack act;
  act.maps = FeatureMaps(8, 12, 12);
  for (std::size_t i = 0; i < act.maps.data.size(); ++i) act.maps.data[i] = a[i];
  act.class_index = static_cast<int>(seed % 3);
  const int cls = act.class_index;

  // One masked forward per channel; softmax over the score increases.
  const Image zero(24, 24, 3, 0.0f);
  const double base = predictor(std::span<const Image>(&zero, 1))(0, cls);
  std::vector<double> delta(8);
  for (int k = 0; k < 8; ++k) {
    std::vector<double> ch(act.maps.channel(k).begin(), act.maps.channel(k).end());
    const double lo = *std::min_element(ch.begin(), ch.end()), hi = *std::max_element(ch.begin(), ch.end());
    std::vector<double> norm(ch.size(), 0.0);
    if (hi > lo) {
      for (std::size_t i = 0; i < ch.size(); ++i) norm[i] = (ch[i] - lo) / (hi - lo);
    }
    const auto mask = resize_plane(norm, 12, 12, 24, 24);
    Image masked = img;
    for (std::size_t p = 0; p < mask.size(); ++p) {
      for (int c = 0; c < 3; ++c) masked.pixels[p * 3 + c] = static_cast<float>(masked.pixels[p * 3 + c] * mask[p]);
    }
    delta[k] = predictor(std::span<const Image>(&masked, 1))(0, cls) - base;
  }
  const double m = *std::max_element(delta.begin(), delta.end());
  std::vector<double> w(8);
  double total = 0;
  for (int k = 0; k < 8; ++k) total += (w[k] = std::exp(delta[k] - m));
  std::vector<double> map(144, 0.0);
  for (int k = 0; k < 8; ++k) {
    for (int i = 0; i < 144; ++i) map[i] += (w[k] / total) * act.maps.channel(k)[i];
  }
  for (double& v : map) v = std::max(v, 0.0);
  const Heatmap oracle = finalize_heatmap(map, 12, 12, 24, 24, "scorecam", cls);
  double gap = 0;
  for (int batch : {1, 3, 8, 16}) {
    const Heatmap h = score_cam(predictor, img, act, batch);
    if (h.values.size() != oracle.values.size()) return INFINITY;
    for (std::size_t i = 0; i < h.values.size(); ++i) gap = std::max(gap, std::abs(h.values[i] - oracle.values[i]));
  }
  return gap;
}

Outcome cam_correctness() {
  // Two channels, grads (2, -1) everywhere: relu(2 A0 - A1) = {2, 0, 0, 0}.
  const double gc1 = max_abs_diff(grad_cam_map(stack_of(2, 2, 2, {1, 0, 0, 0, 0, 0, 0, 1}),
                                               grads_of(2, 2, 2, {2, 2, 2, 2, -1, -1, -1, -1})),
                                  std::vector<double>{2, 0, 0, 0});
  // Mean grads 0.375 and -0.1875: relu(0.375 A0 - 0.1875 A1).
  const auto act2 = stack_of(2, 2, 2, {1, 2, 3, 4, 4, 3, 2, 1});
  const auto grad2 = grads_of(2, 2, 2, {0.5, -1, 2, 0, 1, 1, -3, 0.25});
  const double gc2 = max_abs_diff(grad_cam_map(act2, grad2), std::vector<double>{0, 0.1875, 0.75, 1.3125});
  // Layer-CAM: sum_k relu(g_k) A_k per position.
  const double lc1 = max_abs_diff(layer_cam_map(stack_of(1, 2, 2, {1, 2, 3, 4}), grads_of(1, 2, 2, {1, -1, -1, 1})),
                                  std::vector<double>{1, 0, 0, 4});
  const double lc2 = max_abs_diff(layer_cam_map(act2, grad2), std::vector<double>{4.5, 3, 6, 0.25});
  const double hand = std::max({gc1, gc2, lc1, lc2});

  Rng rng(7007);
  double scale_gap = 0, perm_gap = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(8)), h = 2 + static_cast<int>(rng.below(6)),
              w = 2 + static_cast<int>(rng.below(6));
    std::vector<double> a(k * h * w), g(k * h * w);
    for (auto& v : a) v = std::max(0.0, rng.normal());
    for (auto& v : g) v = rng.normal();
    const auto act = stack_of(k, h, w, a);
    const auto grad = grads_of(k, h, w, g);
    const double c = rng.uniform(0.01, 100.0);
    std::vector<double> scaled = g;
    for (auto& v : scaled) v *= c;
    const auto grad_scaled = grads_of(k, h, w, scaled);
    scale_gap = std::max({scale_gap, max_abs_diff(grad_cam(act, grad, 24, 24).values, grad_cam(act, grad_scaled, 24, 24).values),
                          max_abs_diff(layer_cam(act, grad, 24, 24).values, layer_cam(act, grad_scaled, 24, 24).values)});

    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    std::vector<double> pa(a.size()), pg(g.size());
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int j = 0; j < k; ++j) {
      std::copy_n(a.begin() + perm[j] * plane, plane, pa.begin() + j * plane);
      std::copy_n(g.begin() + perm[j] * plane, plane, pg.begin() + j * plane);
    }
    const auto pact = stack_of(k, h, w, pa);
    const auto pgrad = grads_of(k, h, w, pg);
    perm_gap = std::max({perm_gap, max_abs_diff(grad_cam(act, grad, 24, 24).values, grad_cam(pact, pgrad, 24, 24).values),
                         max_abs_diff(layer_cam(act, grad, 24, 24).values, layer_cam(pact, pgrad, 24, 24).values),
                         max_abs_diff(grad_cam_pp(act, grad, 24, 24).values, grad_cam_pp(pact, pgrad, 24, 24).values)});
  }

  const ScorePredictor square_score = [](std::span<const Image> batch) {
    RowMatrix out(static_cast<Eigen::Index>(batch.size()), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) out(i, 0) = PlantedSquare::score(batch[i]);
    return out;
  };
  std::array<int, 4> localized{};
  std::array<double, 4> lowest{1, 1, 1, 1};
  const std::array<const char*, 4> names{"gradcam", "gradcampp", "layercam", "scorecam"};
  for (int s = 0; s < 20; ++s) {
    const PlantedSquare scene(100 + s);
    const ActivationStack act = PlantedSquare::features(scene.image);
    const GradientStack grad = PlantedSquare::gradients();
    const std::array<Heatmap, 4> maps{grad_cam(act, grad, 64, 64), grad_cam_pp(act, grad, 64, 64),
                                      layer_cam(act, grad, 64, 64), score_cam(square_score, scene.image, act)};
    for (int m = 0; m < 4; ++m) {
      const double mass = scene.mass_inside(maps[m]);
      lowest[m] = std::min(lowest[m], mass);
      localized[m] += mass >= 0.70;
    }
  }
  bool all_localized = true;
  std::string localization;
  for (int m = 0; m < 4; ++m) {
    all_localized = all_localized && localized[m] == 20;
    localization += fmt::format("{}{} {}/20 (min {:.2f})", m ? ", " : "", names[m], localized[m], lowest[m]);
  }

  double score_gap = 0;
  for (std::uint64_t seed : {21ull, 22ull, 23ull}) score_gap = std::max(score_gap, brute_force_score_cam_gap(seed));

  const bool ok = hand <= 1e-9 && scale_gap <= 1e-9 && perm_gap <= 1e-9 && all_localized && score_gap == 0.0;
  return {ok, fmt::format("2x2 hand oracles max err {:.1e}; scale invariance {:.1e}, permutation invariance {:.1e} "
                          "(50 stacks); planted square >=70% mass: {}; score_cam vs brute force max diff {:.1e}",
                          hand, scale_gap, perm_gap, localization, score_gap)};
}

// ------------------------------------------------------------------ 8

// 3 x 2 grid of flat colours; the black box reads which cells still show
// their own colour and returns a fixed linear function of those indicators.
struct LimeScene {
  Image image{60, 40};
  SuperpixelMap segments = grid_segments(60, 40, 6);
  std::array<std::array<float, 3>, 6> colors{};
  std::array<double, 6> beta{};
  double base = 0.3;

  explicit LimeScene(std::uint64_t seed) {
    for (int s = 0; s < 6; ++s) colors[s] = {0.1f + 0.15f * s, 0.9f - 0.12f * s, (s % 2) ? 0.8f : 0.2f};
    std::array<double, 6> planted{0.4, 0.2, -0.15, 0.05, 0.0, -0.1};
    Rng rng(seed);
    rng.shuffle(planted.begin(), planted.end());
    beta = planted;
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 60; ++x) {
        for (int c = 0; c < 3; ++c) image.at(x, y, c) = colors[segments.at(x, y)][c];
      }
    }
  }

  RowMatrix operator()(std::span<const Image> batch) const {
    RowMatrix out(static_cast<Eigen::Index>(batch.size()), 2);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      double f = base;
      for (int s = 0; s < 6; ++s) {
        const int x = 10 + 20 * (s % 3), y = 10 + 20 * (s / 3);
        if (std::abs(batch[i].at(x, y, 0) - colors[s][0]) < 1e-6f) f += beta[s];
      }
      out(i, 0) = f;
      out(i, 1) = 1 - f;
    }
    return out;
  }

  std::array<int, 2> top_two() const {
    std::array<int, 6> order{0, 1, 2, 3, 4, 5};
    std::sort(order.begin(), order.end(), [&](int a, int b) { return beta[a] > beta[b]; });
    return {order[0], order[1]};
  }
};

Outcome lime_recovery() {
  int recovered = 0, top_ok = 0, fit_ok = 0;
  double slowest = 0, lowest_r2 = 1;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const LimeScene scene(seed);
    if (scene.segments.count != 6) return {false, "grid segmentation did not produce 6 segments"};
    LimeConfig config;
    config.seed = seed;
    config.n_samples = 1000;
    const auto t0 = std::chrono::steady_clock::now();
    const auto ex = lime_explain(std::cref(scene), scene.image, scene.segments, 0, config);
    slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    const auto want = scene.top_two();
    const bool top = ex.top_segments.size() >= 2 && ex.top_segments[0] == want[0] && ex.top_segments[1] == want[1];
    top_ok += top;
    fit_ok += ex.r2 >= 0.99;
    lowest_r2 = std::min(lowest_r2, ex.r2);
    recovered += top && ex.r2 >= 0.99;
  }
  const bool ok = recovered >= 95 && slowest < 30.0;
  return {ok, fmt::format("{}/100 seeds recovered (top-2 {}/100, R2>=0.99 {}/100, min R2 {:.4f}); slowest seed {:.3f}s "
                          "at 1000 samples",
                          recovered, top_ok, fit_ok, lowest_r2, slowest)};
}

// ------------------------------------------------------------------ 9

EncoderSpec tiny_encoder(std::uint64_t seed) {
  EncoderSpec e;
  e.architecture = Architecture::tiny;
  e.pretrained = false;
  e.input_size = 110;
  e.seed = seed;
  return e;
}

TrainConfig toy_train_config(TrainMode mode, std::uint64_t seed) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 5;
  c.batch_size = 32;
  c.seed = seed;
  return c;
}

bool encoder_weights_equal(const nn::Network& a, const nn::Network& b) {
  std::size_t compared = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    const auto& la = a.layer(static_cast<int>(n));
    if (la.name().rfind("head_", 0) == 0 || la.name().rfind("proj_", 0) == 0) continue;
    const auto found = b.find(la.name());
    if (!found) return false;
    const auto& lb = b.layer(*found);
    if (la.weights().size() != lb.weights().size()) return false;
    for (std::size_t w = 0; w < la.weights().size(); ++w) {
      const auto& x = la.weights()[w].value;
      const auto& y = lb.weights()[w].value;
      if (x.shape() != y.shape()) return false;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const auto u = x[i], v = y[i];
        if (std::memcmp(&u, &v, sizeof(u)) != 0) return false;
      }
      ++compared;
    }
  }
  return compared > 0;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome toy_end_to_end() {
  const auto previous = set_warning_sink([](const std::string&) {});
  const auto names = class_labels();

  // Standard mode on 100 / 20 / 20 per class.
  auto balanced = toy::balanced_toy_set(9);
  const auto counts = balanced.manifest.split_counts();
  auto t0 = std::chrono::steady_clock::now();
  auto standard = train_model(balanced.manifest, balanced.source, tiny_encoder(1), toy_train_config(TrainMode::standard, 1));
  const double standard_seconds = seconds_since(t0);
  const auto test = balanced.manifest.select(Split::test);
  const double accuracy = evaluate_records(standard.model, test, balanced.source).metrics.accuracy;

  // 10:1 imbalance: the minority class keeps 10 train images, the others 100.
  const int minority = 1;
  std::vector<std::array<int, 3>> skewed(kNumClasses, {100, 20, 20});
  skewed[minority] = {10, 20, 20};
  int raised = 0;
  std::string pairs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto set = toy::make_toy_set(skewed, 300 + seed);
    const auto held_out = set.manifest.select(Split::test);
    auto plain = train_model(set.manifest, set.source, tiny_encoder(seed), toy_train_config(TrainMode::standard, seed));
    TrainConfig weighted = toy_train_config(TrainMode::cost_sensitive, seed);
    weighted.class_weights = compute_class_weights(count_classes(set.manifest, Split::train)).dense(names);
    auto costed = train_model(set.manifest, set.source, tiny_encoder(seed), weighted);
    const double r_plain = evaluate_records(plain.model, held_out, set.source).metrics.per_class[minority].recall;
    const double r_cost = evaluate_records(costed.model, held_out, set.source).metrics.per_class[minority].recall;
    raised += r_cost > r_plain;
    pairs += fmt::format("{}{:.2f}->{:.2f}", seed > 1 ? " " : "", r_plain, r_cost);
  }

  // Contrastive: stage 2 must leave the stage-1 encoder bit-for-bit intact.
  TrainConfig contrastive = toy_train_config(TrainMode::contrastive, 1);
  TrainingHistory history;
  t0 = std::chrono::steady_clock::now();
  const Model stage1 = contrastive_stage1(balanced.manifest, balanced.source, tiny_encoder(1), contrastive, history);
  const nn::Network before = stage1.network();
  auto stage2 = contrastive_stage2(stage1, balanced.manifest, balanced.source, contrastive, history);
  const double contrastive_seconds = seconds_since(t0);
  const bool frozen = encoder_weights_equal(stage2.model.network(), before);
  const double contrastive_accuracy = evaluate_records(stage2.model, test, balanced.source).metrics.accuracy;
  set_warning_sink(previous);

  const bool ok = counts[0] == 500 && counts[1] == 100 && counts[2] == 100 && accuracy >= 0.90 &&
                  standard_seconds < 300.0 && raised >= 4 && frozen;
  return {ok, fmt::format("standard test accuracy {:.3f} ({:.0f}s, 5 epochs, {}/{}/{} at 110px); minority recall "
                          "standard->cost-sensitive {} raised in {}/5; contrastive encoder {} after stage 2 "
                          "(test accuracy {:.3f}, {:.0f}s)",
                          accuracy, standard_seconds, counts[0], counts[1], counts[2], pairs, raised,
                          frozen ? "bitwise unchanged" : "CHANGED", contrastive_accuracy, contrastive_seconds)};
}

struct Criterion {
  int id;
  const char* title;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "class-weight reproduction", class_weight_reproduction},
      {2, "loss reduction identity", loss_reduction_identity},
      {3, "gradient checks", gradient_checks},
      {4, "contrastive hand oracles", contrastive_hand_oracles},
      {5, "metrics oracle", metrics_oracle},
      {6, "split fidelity", split_fidelity},
      {7, "CAM correctness", cam_correctness},
      {8, "LIME recovery", lime_recovery},
      {9, "toy end-to-end", toy_end_to_end},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    failed += !o.pass;
    fmt::print("criterion {}: {} - {} [{:.1f}s]: {}\n", c.id, o.pass ? "PASS" : "FAIL", c.title, seconds_since(t0),
               o.detail);
    std::fflush(stdout);
  }
  if (selected.empty() || selected.count(10)) {
    fmt::print("criterion 10: SKIPPED (stretch, non-gating) - full-scale accuracy: needs the real image archive, "
               "pretrained ImageNet weights and multi-hour training; not run here\n");
  }
  return failed == 0 ? 0 : 1;
}
