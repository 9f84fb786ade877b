#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

#include "chaintree/optim.hpp"
#include "chaintree/rng.hpp"
#include "chaintree/training.hpp"

namespace chaintree {
namespace {

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
Adam<T> make_optimizer(const EncoderModel<T>& model, const TrainConfig& cfg) {
  return Adam<T>(model.params().size(), {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps});
}

std::vector<int> labels_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    if (!data.trees[i].label) throw std::invalid_argument("tree '" + data.trees[i].id + "' has no label");
    out.push_back(*data.trees[i].label);
  }
  return out;
}

}  // namespace

std::string_view to_string(IdResample r) { return r == IdResample::Fixed ? "fixed" : "per_epoch"; }

IdResample id_resample_from_string(std::string_view s) {
  if (s == "per_epoch") return IdResample::PerEpoch;
  if (s == "fixed") return IdResample::Fixed;
  throw std::invalid_argument("id_resample must be 'per_epoch' or 'fixed', got '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be >= 0");
  if (!(tau > 0.0)) throw std::invalid_argument("train: tau must be > 0");
  if (!(lambda_unsup >= 0.0)) throw std::invalid_argument("train: lambda_unsup must be >= 0");
  if (eval_avg_last < 1) throw std::invalid_argument("train: eval_avg_last must be >= 1");
}

std::vector<PreparedTree> prepare(const Dataset& data, const SequenceConfig& seq) {
  std::vector<PreparedTree> out;
  out.reserve(data.size());
  for (const auto& tree : data.trees)
    out.push_back({&tree, extract_chains(tree, {seq.deep_min_len})});
  return out;
}

std::uint64_t identifier_seed(const PropagationTree& tree, const SequenceConfig& seq,
                              std::uint64_t run_seed, std::size_t epoch, bool training) {
  if (training && seq.id_resample == IdResample::PerEpoch)
    return derive_seed(run_seed, "ids", epoch, fnv1a64(tree.id));
  return fnv1a64(tree.id);
}

AugmentedSequence make_sequence(const PreparedTree& t, const SequenceConfig& seq, std::size_t l,
                                std::uint64_t id_seed) {
  const std::size_t rows = std::min(l, t.chains.chains.size() + 1);
  const auto ids = sample_identifiers(l, id_seed, rows);
  return build_inputs(t.chains, *t.tree, ids, seq.embed);
}

template <typename T>
BatchLoss batch_loss(const EncoderModel<T>& model, std::span<const AugmentedSequence> seqs,
                     std::span<const int> labels, const BatchTerms& terms, std::vector<T>* grads,
                     bool train, std::uint64_t dropout_seed) {
  const std::size_t B = seqs.size();
  if (B == 0) throw std::invalid_argument("batch_loss: empty batch");
  const std::size_t d = model.config().d;
  const std::size_t C = model.config().num_classes;
  const bool use_sup = terms.sup_weight > 0.0 && !labels.empty();
  if (use_sup && labels.size() != B) throw std::invalid_argument("batch_loss: label count mismatch");

  // Buffers of the calling thread; the parallel loops reach them through these references.
  thread_local std::vector<EncoderWorkspace<T>> tl_workspaces;
  auto& workspaces = tl_workspaces;
  if (workspaces.size() < B) workspaces.resize(B);
  std::vector<EncoderOutput<T>> outs(B);

  const auto n = static_cast<std::int64_t>(B);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    ForwardOptions fo;
    fo.train = train;
    fo.dropout_seed = derive_seed(dropout_seed, "dropout.sample", static_cast<std::uint64_t>(i));
    outs[static_cast<std::size_t>(i)] =
        model.forward(seqs[static_cast<std::size_t>(i)], workspaces[static_cast<std::size_t>(i)], fo);
  }

  BatchLoss result;
  Matrix<T> logits(B, C);
  std::vector<double> row(C);
  result.predictions.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto lg = model.classify(outs[i].h_root);
    std::copy(lg.begin(), lg.end(), logits.row(i).begin());
    for (std::size_t c = 0; c < C; ++c) row[c] = static_cast<double>(lg[c]);
    result.predictions[i] = argmax(row);
  }

  SupervisedLoss<T> sup;
  if (use_sup) {
    sup = sup_loss<T>(logits, labels);
    result.sup = sup.loss;
    result.has_sup = true;
  }

  ContrastiveLoss<T> con;
  if (terms.unsup_weight > 0.0 && B >= 2) {
    ContrastiveBatch<T> cb;
    cb.roots.resize(B, d);
    cb.heads.resize(B);
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < B; ++i) {
      std::copy(outs[i].h_root.begin(), outs[i].h_root.end(), cb.roots.row(i).begin());
      const auto& heads = seqs[i].chain_heads;
      cb.heads[i].resize(heads.size(), d);
      for (std::size_t k = 0; k < heads.size(); ++k) {
        const auto src = outs[i].H.row(heads[k]);
        std::copy(src.begin(), src.end(), cb.heads[i].row(k).begin());
      }
      pairs += heads.size();
    }
    if (pairs > 0) {
      con = InfoNce<T>(terms.tau, terms.reduction).evaluate(cb);
      result.unsup = con.loss;
      result.has_unsup = true;
    }
  }
  result.total = (result.has_sup ? terms.sup_weight * result.sup : 0.0) +
                 (result.has_unsup ? terms.unsup_weight * result.unsup : 0.0);

  if (!grads) return result;
  const std::size_t P = model.params().size();
  if (grads->size() != P) throw std::invalid_argument("batch_loss: gradient buffer size");

  thread_local std::vector<std::vector<T>> tl_sample_grads;
  auto& sample_grads = tl_sample_grads;
  if (sample_grads.size() < B) sample_grads.resize(B);
  const T sw = static_cast<T>(terms.sup_weight);
  const T uw = static_cast<T>(terms.unsup_weight);

#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    auto& g = sample_grads[i];
    g.assign(P, T{0});
    Matrix<T> dH(seqs[i].m, d);
    if (result.has_unsup) {
      for (std::size_t j = 0; j < d; ++j) dH(0, j) += uw * con.d_roots(i, j);
      const auto& heads = seqs[i].chain_heads;
      for (std::size_t k = 0; k < heads.size(); ++k)
        for (std::size_t j = 0; j < d; ++j) dH(heads[k], j) += uw * con.d_heads[i](k, j);
    }
    if (result.has_sup) {
      std::vector<T> dl(C);
      for (std::size_t c = 0; c < C; ++c) dl[c] = sw * sup.dlogits(i, c);
      model.classifier_backward(outs[i].h_root, dl, g, dH.row(0));
    }
    model.backward(workspaces[i], dH, g);
  }
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t p = 0; p < P; ++p) (*grads)[p] += sample_grads[i][p];
  return result;
}

template <typename T>
Evaluation evaluate(const EncoderModel<T>& model, std::span<const PreparedTree> trees,
                    const SequenceConfig& seq) {
  Evaluation ev;
  if (trees.empty()) return ev;
  constexpr std::size_t kChunk = 64;
  std::vector<int> labels;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < trees.size(); start += kChunk) {
    const std::size_t end = std::min(trees.size(), start + kChunk);
    std::vector<AugmentedSequence> seqs;
    std::vector<int> chunk_labels;
    for (std::size_t i = start; i < end; ++i) {
      const auto& t = trees[i];
      seqs.push_back(make_sequence(t, seq, model.config().id_dim, identifier_seed(*t.tree, seq, 0, 0, false)));
      if (!t.tree->label) throw std::invalid_argument("evaluate: tree '" + t.tree->id + "' has no label");
      chunk_labels.push_back(*t.tree->label);
    }
    const auto bl = batch_loss<T>(model, seqs, chunk_labels, {}, nullptr);
    loss_sum += bl.sup * static_cast<double>(end - start);
    ev.predictions.insert(ev.predictions.end(), bl.predictions.begin(), bl.predictions.end());
    labels.insert(labels.end(), chunk_labels.begin(), chunk_labels.end());
  }
  ev.loss = loss_sum / static_cast<double>(trees.size());
  ev.metrics = classification_metrics(ev.predictions, labels, model.config().num_classes);
  return ev;
}

template <typename T>
ExperimentMetrics pretrain(EncoderModel<T>& model, const Dataset& data, const TrainConfig& cfg,
                           const SequenceConfig& seq) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("pretrain: empty dataset");
  const auto prepared = prepare(data, seq);
  if (std::none_of(prepared.begin(), prepared.end(), [](const auto& t) { return !t.chains.chains.empty(); }))
    throw std::invalid_argument("pretrain: no tree has a conversation chain");

  auto adam = make_optimizer(model, cfg);
  std::vector<T> grads(model.params().size());
  ExperimentMetrics metrics;
  BatchTerms terms;
  terms.sup_weight = 0.0;
  terms.unsup_weight = 1.0;
  terms.tau = cfg.tau;
  terms.reduction = cfg.reduction;

  std::vector<std::size_t> order(prepared.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(cfg.seed, "batch", epoch)).shuffle(order);
    double loss_sum = 0.0;
    std::size_t counted = 0, step = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<AugmentedSequence> seqs;
      for (std::size_t i = start; i < end; ++i) {
        const auto& t = prepared[order[i]];
        seqs.push_back(make_sequence(t, seq, model.config().id_dim,
                                     identifier_seed(*t.tree, seq, cfg.seed, epoch, true)));
      }
      std::fill(grads.begin(), grads.end(), T{0});
      const auto bl = batch_loss<T>(model, seqs, {}, terms, &grads, true,
                                    derive_seed(cfg.seed, "dropout", epoch, step));
      if (!bl.has_unsup) continue;
      if (!std::isfinite(bl.total))
        throw std::runtime_error("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(step));
      adam.step(model.params().values(), grads);
      loss_sum += bl.total * static_cast<double>(end - start);
      counted += end - start;
    }
    EpochRecord rec;
    rec.epoch = static_cast<int>(epoch);
    rec.split = Split::Unlabeled;
    rec.loss = counted ? loss_sum / static_cast<double>(counted) : 0.0;
    metrics.epochs.push_back(rec);
  }
  summarize(metrics, Split::Unlabeled, cfg.eval_avg_last);
  return metrics;
}

template <typename T>
ExperimentMetrics finetune(EncoderModel<T>& model, const Dataset& data, const TrainConfig& cfg,
                           const SequenceConfig& seq, std::span<const std::size_t> train_subset) {
  cfg.validate();
  std::vector<std::size_t> train_idx = train_subset.empty()
                                           ? data.indices(Split::Train)
                                           : std::vector<std::size_t>(train_subset.begin(), train_subset.end());
  const auto val_idx = data.indices(Split::Val);
  const auto test_idx = data.indices(Split::Test);
  if (train_idx.empty()) throw std::invalid_argument("finetune: missing split 'train'");
  if (val_idx.empty()) throw std::invalid_argument("finetune: missing split 'val'");
  if (test_idx.empty()) throw std::invalid_argument("finetune: missing split 'test'");

  const std::size_t C = model.config().num_classes;
  const auto train_labels = labels_of(data, train_idx);
  for (int y : train_labels)
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::invalid_argument("finetune: label " + std::to_string(y) + " out of range");
  if (std::adjacent_find(train_labels.begin(), train_labels.end(), std::not_equal_to<>()) == train_labels.end())
    std::cerr << "warning: finetune: training set contains a single class\n";

  std::vector<PreparedTree> all = prepare(data, seq);
  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<PreparedTree> out;
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
  };
  const auto val = gather(val_idx);
  const auto test = gather(test_idx);

  auto adam = make_optimizer(model, cfg);
  std::vector<T> grads(model.params().size());
  BatchTerms terms;
  terms.sup_weight = 1.0;
  terms.unsup_weight = cfg.lambda_unsup;
  terms.tau = cfg.tau;
  terms.reduction = cfg.reduction;

  ExperimentMetrics metrics;
  metrics.num_classes = C;
  std::vector<std::size_t> order(train_idx.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(cfg.seed, "batch", epoch)).shuffle(order);
    double loss_sum = 0.0;
    std::vector<int> preds, ys;
    std::size_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<AugmentedSequence> seqs;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        const auto& t = all[train_idx[order[i]]];
        seqs.push_back(make_sequence(t, seq, model.config().id_dim,
                                     identifier_seed(*t.tree, seq, cfg.seed, epoch, true)));
        labels.push_back(train_labels[order[i]]);
      }
      std::fill(grads.begin(), grads.end(), T{0});
      const auto bl = batch_loss<T>(model, seqs, labels, terms, &grads, true,
                                    derive_seed(cfg.seed, "dropout", epoch, step));
      if (!std::isfinite(bl.total))
        throw std::runtime_error("finetune: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(step));
      adam.step(model.params().values(), grads);
      loss_sum += bl.total * static_cast<double>(end - start);
      preds.insert(preds.end(), bl.predictions.begin(), bl.predictions.end());
      ys.insert(ys.end(), labels.begin(), labels.end());
    }
    EpochRecord train_rec;
    train_rec.epoch = static_cast<int>(epoch);
    train_rec.split = Split::Train;
    train_rec.loss = loss_sum / static_cast<double>(order.size());
    train_rec.metrics = classification_metrics(preds, ys, C);
    metrics.epochs.push_back(train_rec);

    for (auto [split, set] : {std::pair{Split::Val, &val}, std::pair{Split::Test, &test}}) {
      const auto ev = evaluate(model, std::span<const PreparedTree>(*set), seq);
      EpochRecord rec;
      rec.epoch = static_cast<int>(epoch);
      rec.split = split;
      rec.loss = ev.loss;
      rec.metrics = ev.metrics;
      metrics.epochs.push_back(rec);
    }
  }
  summarize(metrics, Split::Test, cfg.eval_avg_last);
  return metrics;
}

std::vector<std::size_t> balanced_subsample(const Dataset& data, std::size_t k, std::uint64_t seed) {
  const auto train = data.indices(Split::Train);
  const auto C = static_cast<std::size_t>(data.num_classes());
  if (C == 0) throw std::invalid_argument("fewshot: no labeled trees");
  if (k < C) throw std::invalid_argument("fewshot: k=" + std::to_string(k) + " is smaller than the class count");
  if (k > train.size()) throw std::invalid_argument("fewshot: k exceeds the train split size");

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i : train) by_class[static_cast<std::size_t>(*data.trees[i].label)].push_back(i);
  for (auto& v : by_class) rng.shuffle(v);

  std::vector<std::size_t> class_order(C);
  std::iota(class_order.begin(), class_order.end(), 0);
  rng.shuffle(class_order);
  std::vector<std::size_t> quota(C, k / C);
  for (std::size_t r = 0; r < k % C; ++r) ++quota[class_order[r]];

  // Classes short of their quota hand the remainder to the others.
  std::size_t deficit = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if (by_class[c].size() < quota[c]) {
      deficit += quota[c] - by_class[c].size();
      quota[c] = by_class[c].size();
    }
  }
  while (deficit > 0) {
    for (std::size_t c : class_order) {
      if (deficit > 0 && quota[c] < by_class[c].size()) {
        ++quota[c];
        --deficit;
      }
    }
  }

  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < C; ++c) out.insert(out.end(), by_class[c].begin(), by_class[c].begin() + quota[c]);
  std::sort(out.begin(), out.end());
  return out;
}

template <typename T>
FewshotResult fewshot(const EncoderModel<T>* init, const EncoderConfig& enc, const Dataset& data,
                      std::size_t k, const TrainConfig& cfg, const SequenceConfig& seq,
                      std::span<const std::uint64_t> seeds) {
  FewshotResult res;
  for (std::uint64_t seed : seeds) {
    EncoderModel<T> model = init ? *init : EncoderModel<T>(enc, seed);
    TrainConfig run = cfg;
    run.seed = seed;
    auto subset = balanced_subsample(data, k, derive_seed(seed, "fewshot"));
    auto metrics = finetune(model, data, run, seq, subset);
    res.seeds.push_back(seed);
    res.accuracies.push_back(metrics.final_accuracy);
    res.subsets.push_back(std::move(subset));
    res.runs.push_back(std::move(metrics));
  }
  res.accuracy = mean_std(res.accuracies);
  return res;
}

#define CHAINTREE_INSTANTIATE(T)                                                                  \
  template BatchLoss batch_loss(const EncoderModel<T>&, std::span<const AugmentedSequence>,        \
                                std::span<const int>, const BatchTerms&, std::vector<T>*, bool,    \
                                std::uint64_t);                                                    \
  template Evaluation evaluate(const EncoderModel<T>&, std::span<const PreparedTree>,              \
                               const SequenceConfig&);                                             \
  template ExperimentMetrics pretrain(EncoderModel<T>&, const Dataset&, const TrainConfig&,        \
                                      const SequenceConfig&);                                      \
  template ExperimentMetrics finetune(EncoderModel<T>&, const Dataset&, const TrainConfig&,        \
                                      const SequenceConfig&, std::span<const std::size_t>);        \
  template FewshotResult fewshot(const EncoderModel<T>*, const EncoderConfig&, const Dataset&,     \
                                 std::size_t, const TrainConfig&, const SequenceConfig&,           \
                                 std::span<const std::uint64_t>);

CHAINTREE_INSTANTIATE(float)
CHAINTREE_INSTANTIATE(double)
#undef CHAINTREE_INSTANTIATE

}  // namespace chaintree
