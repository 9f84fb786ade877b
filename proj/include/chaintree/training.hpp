#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "chaintree/chains.hpp"
#include "chaintree/embedding.hpp"
#include "chaintree/encoder.hpp"
#include "chaintree/losses.hpp"
#include "chaintree/metrics.hpp"
#include "chaintree/tree.hpp"

namespace chaintree {

enum class IdResample { PerEpoch, Fixed };

std::string_view to_string(IdResample r);
IdResample id_resample_from_string(std::string_view s);

/// How trees become token sequences.
struct SequenceConfig {
  EmbeddingOptions embed;
  std::size_t deep_min_len = 2;
  IdResample id_resample = IdResample::PerEpoch;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 5e-5;
  std::size_t epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lambda_unsup = 0.0;
  double tau = 0.5;
  std::uint64_t seed = 0;
  std::size_t eval_avg_last = 10;
  PairReduction reduction = PairReduction::MeanOverPairs;

  void validate() const;
};

/// A tree with its chains extracted once.
struct PreparedTree {
  const PropagationTree* tree = nullptr;
  ConversationChainSet chains;
};

std::vector<PreparedTree> prepare(const Dataset& data, const SequenceConfig& seq);

/// Identifier seed for one tree: a fresh stream per (run seed, epoch, tree)
/// while training with PerEpoch resampling, otherwise a stable hash of the
/// tree id.
std::uint64_t identifier_seed(const PropagationTree& tree, const SequenceConfig& seq,
                              std::uint64_t run_seed, std::size_t epoch, bool training);

AugmentedSequence make_sequence(const PreparedTree& t, const SequenceConfig& seq, std::size_t l,
                                std::uint64_t id_seed);

struct BatchLoss {
  double total = 0.0;
  double sup = 0.0;
  double unsup = 0.0;
  bool has_sup = false;
  bool has_unsup = false;
  std::vector<int> predictions;
};

struct BatchTerms {
  double sup_weight = 1.0;    // 0 disables the supervised term
  double unsup_weight = 0.0;  // 0 disables the contrastive term
  double tau = 0.5;
  PairReduction reduction = PairReduction::MeanOverPairs;
};

/// Loss of one batch and, when `grads` is non-null, its gradient (added to
/// *grads). Per-sample gradients are summed in batch order, so the result
/// does not depend on the OpenMP thread count. The contrastive term is
/// skipped when fewer than two sequences or no chain heads are present.
template <typename T>
BatchLoss batch_loss(const EncoderModel<T>& model, std::span<const AugmentedSequence> seqs,
                     std::span<const int> labels, const BatchTerms& terms, std::vector<T>* grads,
                     bool train = false, std::uint64_t dropout_seed = 0);

struct Evaluation {
  double loss = 0.0;
  ClassMetrics metrics;
  std::vector<int> predictions;
};

template <typename T>
Evaluation evaluate(const EncoderModel<T>& model, std::span<const PreparedTree> trees,
                    const SequenceConfig& seq);

/// Contrastive pretraining on every tree of `data`. One record per epoch
/// with split Unlabeled.
template <typename T>
ExperimentMetrics pretrain(EncoderModel<T>& model, const Dataset& data, const TrainConfig& cfg,
                           const SequenceConfig& seq);

/// Supervised fine-tuning: total = L_sup + lambda_unsup * L_unsup. Records
/// train/val/test each epoch; the summary is the mean of the last
/// eval_avg_last test epochs. `train_subset` (indices into `data`) replaces
/// the train split when non-empty.
template <typename T>
ExperimentMetrics finetune(EncoderModel<T>& model, const Dataset& data, const TrainConfig& cfg,
                           const SequenceConfig& seq, std::span<const std::size_t> train_subset = {});

/// Class-balanced sample of k train trees, sorted by index.
std::vector<std::size_t> balanced_subsample(const Dataset& data, std::size_t k, std::uint64_t seed);

struct FewshotResult {
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<std::size_t>> subsets;
  std::vector<ExperimentMetrics> runs;
  std::vector<double> accuracies;
  MeanStd accuracy;
};

/// Fine-tunes on k labeled trees per seed, starting from `init` (a
/// pretrained model) or from a fresh initialization when `init` is null.
template <typename T>
FewshotResult fewshot(const EncoderModel<T>* init, const EncoderConfig& enc, const Dataset& data,
                      std::size_t k, const TrainConfig& cfg, const SequenceConfig& seq,
                      std::span<const std::uint64_t> seeds);

}  // namespace chaintree
