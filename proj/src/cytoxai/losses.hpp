#pragma once

#include <Eigen/Dense>
#include <span>
#include <string_view>

namespace cytoxai {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Probabilities are clipped to [kProbabilityClamp, 1 - kProbabilityClamp].
inline constexpr double kProbabilityClamp = 1e-7;

// Loss value and its gradient with respect to the first input (same shape).
struct LossValue {
  double value = 0.0;
  RowMatrix grad;
};

// Mean of -log p[i, y_i] over rows of an N x K probability matrix.
LossValue log_loss(const RowMatrix& probs, std::span<const int> labels);

// Mean of -w[y_i] log p[i, y_i]; `class_weights` is indexed by class.
LossValue weighted_log_loss(const RowMatrix& probs, std::span<const int> labels, std::span<const double> class_weights);

// Same objective taken from pre-softmax scores (no clipping needed). Empty
// weights mean 1 for every class. Gradient is with respect to the logits.
LossValue softmax_cross_entropy(const RowMatrix& logits, std::span<const int> labels,
                                std::span<const double> class_weights = {});

// Single tuple: log(1 + sum_k exp(a.n_k - a.p)). Gradients for a, p and the
// negatives (one row each) are returned in that order as rows of `grad`.
LossValue npairs_tuple_loss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                            const RowMatrix& negatives);

// Batch form: every row is an anchor, its positive is the next row of the same
// class (cyclic in batch order), negatives are all rows of other classes.
// A class with a single row has no positive and raises ArgumentError; a batch
// of one class has no negatives and yields 0 with a warning.
LossValue multiclass_npairs_loss(const RowMatrix& embeddings, std::span<const int> labels);

// Supervised NT-Xent with temperature tau over L2-normalised rows.
LossValue supervised_ntxent_loss(const RowMatrix& embeddings, std::span<const int> labels, double temperature = 0.1);

// max(0, |a - p| - |a - n| + margin). Rows of `grad`: d/da, d/dp, d/dn.
LossValue triplet_margin_loss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                              const Eigen::VectorXd& negative, double margin = 1.0);

// Batch form: positive as in multiclass_npairs_loss, negative is the next row
// of a different class (cyclic). Mean over anchors.
LossValue batch_triplet_loss(const RowMatrix& embeddings, std::span<const int> labels, double margin = 1.0);

enum class ContrastiveLoss { npairs, ntxent, triplet };
std::string_view contrastive_loss_name(ContrastiveLoss loss);
ContrastiveLoss parse_contrastive_loss(std::string_view name);

// True when every label occurs at least twice and at least two labels occur.
bool has_positive_pairs(std::span<const int> labels);

}  // namespace cytoxai
