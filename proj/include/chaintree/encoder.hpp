#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "chaintree/embedding.hpp"
#include "chaintree/matrix.hpp"
#include "chaintree/params.hpp"

namespace chaintree {

enum class Precision { Standard, High };

std::string_view to_string(Precision p);
Precision precision_from_string(std::string_view s);
/// Reads CHAINTREE_PRECISION; Standard when unset.
Precision precision_from_env();

/// Encoder hyperparameters. heads, ffn_dim and dropout are not given by the
/// method description; the defaults here are our own.
struct EncoderConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t layers = 3;
  std::size_t ffn_dim = 256;
  double dropout = 0.1;
  std::size_t id_dim = 256;  // l
  std::size_t num_classes = 2;

  void validate() const;
};

/// (d + l) d + L (4 d^2 + 9 d + 2 d f + f) + d C + C
std::size_t parameter_count(const EncoderConfig& cfg);

struct ForwardOptions {
  bool retain_attention = false;
  bool train = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct EncoderOutput {
  Matrix<T> H;               // m x d final-layer token states
  std::vector<T> h_root;     // H row 0
  std::vector<std::vector<Matrix<T>>> attn;  // [layer][head] m x m, when retained
};

/// Activations kept between forward and backward. One per in-flight sample.
template <typename T>
struct EncoderWorkspace {
  struct Layer {
    Matrix<T> x_in, a, q, k, v, ctx, attn_out, x_mid, b, hpre, g, f;
    Matrix<T> mask1, mask2;  // dropout multipliers; empty when dropout is off
    std::vector<T> mean1, rstd1, mean2, rstd2;
    std::vector<Matrix<T>> probs;  // per head, m x m
  };
  bool ready = false;
  std::size_t m = 0;
  Matrix<T> S, ids, cw, x0;
  std::vector<std::size_t> id_row;
  std::vector<Layer> layers;
  Matrix<T> H;
};

/// Pre-layer-norm Transformer encoder over an augmented token sequence plus
/// the input projection w and a linear classifier on h_root.
template <typename T>
class EncoderModel {
 public:
  EncoderModel() = default;
  EncoderModel(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Input projection w, (d + l) x d.
  std::size_t projection_block() const { return proj_; }

  EncoderOutput<T> forward(const AugmentedSequence& seq, EncoderWorkspace<T>& ws,
                           const ForwardOptions& opts = {}) const;

  /// Accumulates parameter gradients for upstream gradient dH (m x d) at the
  /// final token states of the last forward on `ws`.
  void backward(EncoderWorkspace<T>& ws, ConstMatrixView<T> dH, std::vector<T>& grads) const;

  std::vector<T> classify(std::span<const T> h) const;
  /// Accumulates classifier gradients and writes dL/dh into `dh` (added).
  void classifier_backward(std::span<const T> h, std::span<const T> dlogits,
                           std::vector<T>& grads, std::span<T> dh) const;

  /// Projection as a double matrix, for build_sequence.
  Matrix<double> projection() const;

 private:
  struct LayerBlocks {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  EncoderConfig cfg_;
  ParamSet<T> params_;
  std::size_t proj_ = 0;
  std::vector<LayerBlocks> layer_blocks_;
  std::size_t cls_w_ = 0, cls_b_ = 0;
};

/// Last-layer attention from the source token, averaged over heads; nodes
/// that appear in several chains keep their highest score. Sorted by score
/// descending, ties by node index. Includes the source node itself.
template <typename T>
std::vector<std::pair<int, double>> rank_replies_by_attention(const EncoderModel<T>& model,
                                                              const AugmentedSequence& seq);

}  // namespace chaintree
