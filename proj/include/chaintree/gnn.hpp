#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "chaintree/kernels.hpp"
#include "chaintree/matrix.hpp"
#include "chaintree/metrics.hpp"
#include "chaintree/params.hpp"
#include "chaintree/training.hpp"
#include "chaintree/tree.hpp"

namespace chaintree {

enum class Direction { TopDown, BottomUp, Undirected, Bi };
enum class Readout { MeanPool, MeanPoolRoot };

std::string_view to_string(Direction d);
Direction direction_from_string(std::string_view s);
std::string_view to_string(Readout r);
Readout readout_from_string(std::string_view s);

struct GcnConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t input_dim = 64;
  std::size_t num_classes = 2;
  Direction direction = Direction::Bi;
  Readout readout = Readout::MeanPoolRoot;

  void validate() const;
};

/// Propagation matrix for one direction (not Bi). Row i aggregates the
/// nodes i receives messages from, plus itself. Undirected uses
/// D^{-1/2}(A+I)D^{-1/2}; directed variants use in-degree row normalization.
template <typename T>
CsrMatrix<T> normalized_adjacency(const PropagationTree& tree, Direction dir);

template <typename T>
struct GcnWorkspace {
  struct Stack {
    CsrMatrix<T> adj, adj_t;
    std::vector<Matrix<T>> h;  // layers + 1; h[0] is the input
    std::vector<Matrix<T>> p;  // adj * h[l]
    std::vector<Matrix<T>> z;  // pre-activation
  };
  std::vector<Stack> stacks;
  std::vector<T> readout;
};

/// Graph convolution stacks (two for Bi) with ReLU after every layer, a
/// readout and a linear classifier.
template <typename T>
class GcnModel {
 public:
  GcnModel() = default;
  GcnModel(const GcnConfig& cfg, std::uint64_t seed);

  const GcnConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::vector<Direction> stack_directions() const;
  std::size_t readout_dim() const;

  /// Logits for one tree; keeps per-layer states in `ws`.
  std::vector<T> forward(const PropagationTree& tree, GcnWorkspace<T>& ws) const;
  /// Accumulates parameter gradients for dlogits after forward on `ws`.
  void backward(GcnWorkspace<T>& ws, std::span<const T> dlogits, std::vector<T>& grads) const;

 private:
  GcnConfig cfg_;
  ParamSet<T> params_;
  std::vector<std::vector<std::size_t>> weights_;  // [stack][layer]
  std::size_t cls_w_ = 0, cls_b_ = 0;
};

/// Node-feature matrix of a tree.
template <typename T>
Matrix<T> feature_matrix(const PropagationTree& tree);

struct SmoothnessReport {
  // Index 0 is the input features, index l the output of layer l.
  std::vector<double> mean_cosine;
  std::vector<double> dirichlet_energy;
  std::vector<std::vector<double>> tree_cosine;  // [tree][layer]
  // Fraction of input-feature energy in each band of Laplacian eigenvectors,
  // lowest frequencies first; averaged over trees.
  std::vector<double> spectral_fractions;
};

/// Mean cosine similarity over all node pairs. A pair of zero vectors counts
/// as 1, a zero vector against a non-zero one as 0; a single node gives 1.
double mean_pairwise_cosine(ConstMatrixView<double> h);
/// Sum over undirected tree edges of |h_u - h_v|^2 divided by the edge count.
double dirichlet_energy(const PropagationTree& tree, ConstMatrixView<double> h);
/// Energy fractions of x over `bands` equal-sized groups of eigenvectors of
/// the combinatorial Laplacian of the undirected tree.
std::vector<double> spectral_fractions(const PropagationTree& tree, ConstMatrixView<double> x,
                                       std::size_t bands);

template <typename T>
SmoothnessReport smoothness_report(const GcnModel<T>& model, std::span<const PropagationTree* const> trees,
                                   std::size_t bands = 4);

/// Trains on the train split (cross-entropy on the readout), recording
/// train/val/test per epoch like finetune.
template <typename T>
ExperimentMetrics train_gcn(GcnModel<T>& model, const Dataset& data, const TrainConfig& cfg);

}  // namespace chaintree
