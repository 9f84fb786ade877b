#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "chaintree/matrix.hpp"

namespace chaintree {

template <typename T>
struct SupervisedLoss {
  double loss = 0.0;
  Matrix<T> dlogits;  // B x C
};

/// Mean cross-entropy of softmax(logits) against labels.
template <typename T>
SupervisedLoss<T> sup_loss(ConstMatrixView<T> logits, std::span<const int> labels);

/// Per-tree contrastive inputs: the source representation and the
/// representations of the first token of every conversation chain.
template <typename T>
struct ContrastiveBatch {
  Matrix<T> roots;               // B x d
  std::vector<Matrix<T>> heads;  // per tree, n_i x d (may be empty)
};

template <typename T>
struct ContrastiveLoss {
  double loss = 0.0;
  std::size_t pairs = 0;
  Matrix<T> d_roots;
  std::vector<Matrix<T>> d_heads;
};

enum class PairReduction {
  MeanOverPairs,  // average over every (tree, chain head) pair
  SumPerTree,     // sum over heads, average over trees in the batch
};

/// Mutual-information lower-bound estimator between chain heads and roots.
template <typename T>
class MiEstimator {
 public:
  virtual ~MiEstimator() = default;
  virtual std::string_view name() const = 0;
  virtual ContrastiveLoss<T> evaluate(const ContrastiveBatch<T>& batch) const = 0;
};

/// InfoNCE: the positive for head n of tree i is root i, the negatives are
/// the other roots in the batch; scores are cosine similarity / tau.
/// Minimizing the loss maximizes the bound.
template <typename T>
class InfoNce final : public MiEstimator<T> {
 public:
  explicit InfoNce(double tau, PairReduction reduction = PairReduction::MeanOverPairs);
  std::string_view name() const override { return "infonce"; }
  ContrastiveLoss<T> evaluate(const ContrastiveBatch<T>& batch) const override;

 private:
  double tau_;
  PairReduction reduction_;
};

/// InfoNCE with default reduction; throws on a batch of one or when no tree
/// in the batch has a chain.
template <typename T>
ContrastiveLoss<T> unsup_loss(const ContrastiveBatch<T>& batch, double tau,
                              PairReduction reduction = PairReduction::MeanOverPairs);

}  // namespace chaintree
