#include "chaintree/gnn.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "chaintree/losses.hpp"
#include "chaintree/optim.hpp"
#include "chaintree/rng.hpp"

namespace chaintree {

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::TopDown: return "TD";
    case Direction::BottomUp: return "BU";
    case Direction::Undirected: return "UD";
    case Direction::Bi: return "Bi";
  }
  return "?";
}

Direction direction_from_string(std::string_view s) {
  if (s == "TD") return Direction::TopDown;
  if (s == "BU") return Direction::BottomUp;
  if (s == "UD") return Direction::Undirected;
  if (s == "Bi") return Direction::Bi;
  throw std::invalid_argument("direction must be one of TD, BU, UD, Bi; got '" + std::string(s) + "'");
}

std::string_view to_string(Readout r) { return r == Readout::MeanPool ? "mean" : "mean_root"; }

Readout readout_from_string(std::string_view s) {
  if (s == "mean") return Readout::MeanPool;
  if (s == "mean_root") return Readout::MeanPoolRoot;
  throw std::invalid_argument("readout must be 'mean' or 'mean_root', got '" + std::string(s) + "'");
}

void GcnConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("gcn: layers must be >= 1");
  if (hidden < 1) throw std::invalid_argument("gcn: hidden must be >= 1");
  if (input_dim < 1) throw std::invalid_argument("gcn: input_dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("gcn: num_classes must be >= 2");
}

template <typename T>
CsrMatrix<T> normalized_adjacency(const PropagationTree& tree, Direction dir) {
  if (dir == Direction::Bi) throw std::invalid_argument("normalized_adjacency: Bi has two matrices");
  const std::size_t n = tree.size();
  // Sources each node aggregates from, self first.
  std::vector<std::vector<std::size_t>> in(n);
  for (std::size_t i = 0; i < n; ++i) in[i].push_back(i);
  for (std::size_t i = 1; i < n; ++i) {
    const auto p = static_cast<std::size_t>(tree.nodes[i].parent);
    if (dir == Direction::TopDown || dir == Direction::Undirected) in[i].push_back(p);
    if (dir == Direction::BottomUp || dir == Direction::Undirected) in[p].push_back(i);
  }
  CsrMatrix<T> a;
  a.rows = a.cols = n;
  a.row_ptr.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(in[i].begin(), in[i].end());
    for (std::size_t j : in[i]) {
      a.col_idx.push_back(j);
      const double v = dir == Direction::Undirected
                           ? 1.0 / std::sqrt(static_cast<double>(in[i].size() * in[j].size()))
                           : 1.0 / static_cast<double>(in[i].size());
      a.values.push_back(static_cast<T>(v));
    }
    a.row_ptr.push_back(a.col_idx.size());
  }
  return a;
}

template <typename T>
Matrix<T> feature_matrix(const PropagationTree& tree) {
  const std::size_t n = tree.size(), f = tree.feature_dim();
  Matrix<T> x(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    if (tree.nodes[i].features.size() != f) throw std::invalid_argument("gcn: feature dimension mismatch");
    for (std::size_t k = 0; k < f; ++k) x(i, k) = static_cast<T>(tree.nodes[i].features[k]);
  }
  return x;
}

template <typename T>
GcnModel<T>::GcnModel(const GcnConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "init"));
  const auto dirs = stack_directions();
  weights_.resize(dirs.size());
  for (std::size_t s = 0; s < dirs.size(); ++s) {
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::size_t in = l == 0 ? cfg_.input_dim : cfg_.hidden;
      weights_[s].push_back(params_.add("gcn." + std::string(to_string(dirs[s])) + ".w" + std::to_string(l),
                                        in, cfg_.hidden));
    }
  }
  cls_w_ = params_.add("cls.w", readout_dim(), cfg_.num_classes);
  cls_b_ = params_.add("cls.b", 1, cfg_.num_classes);
  // Glorot-normal weights, zero bias.
  for (const auto& stack : weights_) {
    for (std::size_t b : stack) {
      auto v = params_.view(b);
      const double sd = std::sqrt(2.0 / static_cast<double>(v.rows + v.cols));
      for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<T>(sd * rng.normal());
    }
  }
  auto w = params_.view(cls_w_);
  const double sd = std::sqrt(2.0 / static_cast<double>(w.rows + w.cols));
  for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = static_cast<T>(sd * rng.normal());
}

template <typename T>
std::vector<Direction> GcnModel<T>::stack_directions() const {
  if (cfg_.direction == Direction::Bi) return {Direction::TopDown, Direction::BottomUp};
  return {cfg_.direction};
}

template <typename T>
std::size_t GcnModel<T>::readout_dim() const {
  const std::size_t per = cfg_.readout == Readout::MeanPoolRoot ? 2 * cfg_.hidden : cfg_.hidden;
  return per * stack_directions().size();
}

template <typename T>
std::vector<T> GcnModel<T>::forward(const PropagationTree& tree, GcnWorkspace<T>& ws) const {
  if (tree.feature_dim() != cfg_.input_dim)
    throw std::invalid_argument("gcn: tree '" + tree.id + "' has feature dimension " +
                                std::to_string(tree.feature_dim()) + ", model expects " +
                                std::to_string(cfg_.input_dim));
  const std::size_t n = tree.size(), hd = cfg_.hidden, L = cfg_.layers;
  const auto dirs = stack_directions();
  ws.stacks.resize(dirs.size());
  ws.readout.assign(readout_dim(), T{0});
  const std::size_t per = cfg_.readout == Readout::MeanPoolRoot ? 2 * hd : hd;
  for (std::size_t s = 0; s < dirs.size(); ++s) {
    auto& st = ws.stacks[s];
    st.adj = normalized_adjacency<T>(tree, dirs[s]);
    st.adj_t = transpose(st.adj);
    st.h.resize(L + 1);
    st.p.resize(L);
    st.z.resize(L);
    st.h[0] = feature_matrix<T>(tree);
    for (std::size_t l = 0; l < L; ++l) {
      st.p[l].resize(n, st.h[l].cols());
      kernels::spmm<T>(st.adj, st.h[l], st.p[l]);
      st.z[l].resize(n, hd);
      kernels::gemm_nn<T>(st.p[l], params_.view(weights_[s][l]), st.z[l]);
      st.h[l + 1] = st.z[l];
      for (T& v : st.h[l + 1].storage()) v = std::max(v, T{0});
    }
    const auto& top = st.h[L];
    T* out = ws.readout.data() + s * per;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < hd; ++k) out[k] += top(i, k);
    for (std::size_t k = 0; k < hd; ++k) out[k] /= static_cast<T>(n);
    if (cfg_.readout == Readout::MeanPoolRoot)
      for (std::size_t k = 0; k < hd; ++k) out[hd + k] = top(0, k);
  }
  std::vector<T> logits(cfg_.num_classes);
  const auto w = params_.view(cls_w_);
  const auto b = params_.view(cls_b_);
  for (std::size_t c = 0; c < cfg_.num_classes; ++c) {
    T acc = b(0, c);
    for (std::size_t k = 0; k < ws.readout.size(); ++k) acc += ws.readout[k] * w(k, c);
    logits[c] = acc;
  }
  return logits;
}

template <typename T>
void GcnModel<T>::backward(GcnWorkspace<T>& ws, std::span<const T> dlogits, std::vector<T>& grads) const {
  if (ws.stacks.empty()) throw std::logic_error("gcn: backward without forward");
  const std::size_t C = cfg_.num_classes, R = ws.readout.size(), hd = cfg_.hidden, L = cfg_.layers;
  const auto w = params_.view(cls_w_);
  auto gw = params_.view(grads, cls_w_);
  auto gb = params_.view(grads, cls_b_);
  std::vector<T> dr(R, T{0});
  for (std::size_t c = 0; c < C; ++c) {
    gb(0, c) += dlogits[c];
    for (std::size_t k = 0; k < R; ++k) {
      gw(k, c) += ws.readout[k] * dlogits[c];
      dr[k] += w(k, c) * dlogits[c];
    }
  }
  const std::size_t per = cfg_.readout == Readout::MeanPoolRoot ? 2 * hd : hd;
  for (std::size_t s = 0; s < ws.stacks.size(); ++s) {
    auto& st = ws.stacks[s];
    const std::size_t n = st.h[0].rows();
    Matrix<T> dh(n, hd);
    const T* g = dr.data() + s * per;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < hd; ++k) dh(i, k) = g[k] / static_cast<T>(n);
    if (cfg_.readout == Readout::MeanPoolRoot)
      for (std::size_t k = 0; k < hd; ++k) dh(0, k) += g[hd + k];
    for (std::size_t l = L; l-- > 0;) {
      Matrix<T> dz = dh;
      for (std::size_t i = 0; i < dz.size(); ++i)
        if (!(st.z[l].data()[i] > T{0})) dz.data()[i] = T{0};
      auto gwl = params_.view(grads, weights_[s][l]);
      kernels::gemm_tn<T>(st.p[l], dz, gwl, true);
      if (l == 0) break;
      Matrix<T> dp(n, st.p[l].cols());
      kernels::gemm_nt<T>(dz, params_.view(weights_[s][l]), dp);
      dh.resize(n, st.h[l].cols());
      kernels::spmm<T>(st.adj_t, dp, dh);
    }
  }
}

double mean_pairwise_cosine(ConstMatrixView<double> h) {
  const std::size_t n = h.rows;
  if (n < 2) return 1.0;
  std::vector<double> norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : h.row(i)) s += v * v;
    norm[i] = std::sqrt(s);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool zi = norm[i] == 0.0, zj = norm[j] == 0.0;
      if (zi || zj) {
        total += zi && zj ? 1.0 : 0.0;
        continue;
      }
      double dot = 0.0;
      for (std::size_t k = 0; k < h.cols; ++k) dot += h(i, k) * h(j, k);
      total += std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
    }
  }
  return total / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double dirichlet_energy(const PropagationTree& tree, ConstMatrixView<double> h) {
  if (tree.size() < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 1; i < tree.size(); ++i) {
    const auto p = static_cast<std::size_t>(tree.nodes[i].parent);
    for (std::size_t k = 0; k < h.cols; ++k) {
      const double diff = h(i, k) - h(p, k);
      total += diff * diff;
    }
  }
  return total / static_cast<double>(tree.size() - 1);
}

std::vector<double> spectral_fractions(const PropagationTree& tree, ConstMatrixView<double> x,
                                       std::size_t bands) {
  if (bands < 1) throw std::invalid_argument("spectral_fractions: bands must be >= 1");
  const std::size_t n = tree.size();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 1; i < n; ++i) {
    const auto a = static_cast<Eigen::Index>(i);
    const auto b = static_cast<Eigen::Index>(tree.nodes[i].parent);
    lap(a, a) += 1.0;
    lap(b, b) += 1.0;
    lap(a, b) -= 1.0;
    lap(b, a) -= 1.0;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  const Eigen::MatrixXd& u = solver.eigenvectors();  // ascending eigenvalues
  std::vector<double> energy(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t f = 0; f < x.cols; ++f) {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) * x(i, f);
      energy[k] += c * c;
    }
  }
  std::vector<double> out(bands, 0.0);
  const double total = std::accumulate(energy.begin(), energy.end(), 0.0);
  if (total == 0.0) {
    out[0] = 1.0;
    return out;
  }
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t k = b * n / bands; k < (b + 1) * n / bands; ++k) out[b] += energy[k] / total;
  return out;
}

template <typename T>
SmoothnessReport smoothness_report(const GcnModel<T>& model, std::span<const PropagationTree* const> trees,
                                   std::size_t bands) {
  SmoothnessReport rep;
  const std::size_t L = model.config().layers;
  rep.mean_cosine.assign(L + 1, 0.0);
  rep.dirichlet_energy.assign(L + 1, 0.0);
  rep.spectral_fractions.assign(bands, 0.0);
  if (trees.empty()) return rep;
  GcnWorkspace<T> ws;
  for (const PropagationTree* tree : trees) {
    model.forward(*tree, ws);
    std::vector<double> cos(L + 1);
    for (std::size_t l = 0; l <= L; ++l) {
      // Node states of all stacks side by side.
      const std::size_t n = tree->size();
      std::size_t width = 0;
      for (const auto& st : ws.stacks) width += st.h[l].cols();
      Matrix<double> h(n, width);
      std::size_t off = 0;
      for (const auto& st : ws.stacks) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < st.h[l].cols(); ++k) h(i, off + k) = static_cast<double>(st.h[l](i, k));
        off += st.h[l].cols();
        if (l == 0) break;  // the input is shared
      }
      if (l == 0) {
        Matrix<double> x(n, ws.stacks[0].h[0].cols());
        for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = h(i / x.cols(), i % x.cols());
        h = std::move(x);
      }
      cos[l] = mean_pairwise_cosine(h);
      rep.mean_cosine[l] += cos[l];
      rep.dirichlet_energy[l] += dirichlet_energy(*tree, h);
      if (l == 0) {
        const auto fr = spectral_fractions(*tree, h, bands);
        for (std::size_t b = 0; b < bands; ++b) rep.spectral_fractions[b] += fr[b];
      }
    }
    rep.tree_cosine.push_back(std::move(cos));
  }
  const auto count = static_cast<double>(trees.size());
  for (double& v : rep.mean_cosine) v /= count;
  for (double& v : rep.dirichlet_energy) v /= count;
  for (double& v : rep.spectral_fractions) v /= count;
  return rep;
}

namespace {

template <typename T>
struct GcnBatch {
  double loss = 0.0;
  std::vector<int> predictions;
};

template <typename T>
GcnBatch<T> gcn_batch(const GcnModel<T>& model, const Dataset& data, std::span<const std::size_t> idx,
                      std::vector<T>* grads) {
  const std::size_t B = idx.size(), C = model.config().num_classes;
  // Buffers of the calling thread; the parallel loops reach them through these references.
  thread_local std::vector<GcnWorkspace<T>> tl_workspaces;
  auto& workspaces = tl_workspaces;
  if (workspaces.size() < B) workspaces.resize(B);
  Matrix<T> logits(B, C);
  const auto n = static_cast<std::int64_t>(B);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    const auto lg = model.forward(data.trees[idx[s]], workspaces[s]);
    std::copy(lg.begin(), lg.end(), logits.row(s).begin());
  }
  std::vector<int> labels(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& t = data.trees[idx[i]];
    if (!t.label) throw std::invalid_argument("gcn: tree '" + t.id + "' has no label");
    labels[i] = *t.label;
  }
  const auto sup = sup_loss<T>(logits, labels);
  GcnBatch<T> out;
  out.loss = sup.loss;
  out.predictions.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto r = logits.row(i);
    out.predictions[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  if (!grads) return out;
  const std::size_t P = model.params().size();
  thread_local std::vector<std::vector<T>> tl_sample_grads;
  auto& sample_grads = tl_sample_grads;
  if (sample_grads.size() < B) sample_grads.resize(B);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    sample_grads[s].assign(P, T{0});
    model.backward(workspaces[s], sup.dlogits.row(s), sample_grads[s]);
  }
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t p = 0; p < P; ++p) (*grads)[p] += sample_grads[i][p];
  return out;
}

template <typename T>
EpochRecord gcn_eval(const GcnModel<T>& model, const Dataset& data, const std::vector<std::size_t>& idx,
                     Split split, int epoch) {
  constexpr std::size_t kChunk = 64;
  EpochRecord rec;
  rec.epoch = epoch;
  rec.split = split;
  std::vector<int> preds, labels;
  double loss = 0.0;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const std::size_t end = std::min(idx.size(), start + kChunk);
    const auto b = gcn_batch<T>(model, data, std::span(idx).subspan(start, end - start), nullptr);
    loss += b.loss * static_cast<double>(end - start);
    preds.insert(preds.end(), b.predictions.begin(), b.predictions.end());
    for (std::size_t i = start; i < end; ++i) labels.push_back(*data.trees[idx[i]].label);
  }
  rec.loss = loss / static_cast<double>(idx.size());
  rec.metrics = classification_metrics(preds, labels, model.config().num_classes);
  return rec;
}

}  // namespace

template <typename T>
ExperimentMetrics train_gcn(GcnModel<T>& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto train = data.indices(Split::Train);
  const auto val = data.indices(Split::Val);
  const auto test = data.indices(Split::Test);
  if (train.empty()) throw std::invalid_argument("gcn: missing split 'train'");
  if (val.empty()) throw std::invalid_argument("gcn: missing split 'val'");
  if (test.empty()) throw std::invalid_argument("gcn: missing split 'test'");

  Adam<T> adam(model.params().size(), {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps});
  std::vector<T> grads(model.params().size());
  ExperimentMetrics metrics;
  metrics.num_classes = model.config().num_classes;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order = train;
    Rng(derive_seed(cfg.seed, "batch", epoch)).shuffle(order);
    double loss = 0.0;
    std::vector<int> preds, labels;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(grads.begin(), grads.end(), T{0});
      const auto b = gcn_batch<T>(model, data, std::span(order).subspan(start, end - start), &grads);
      if (!std::isfinite(b.loss))
        throw std::runtime_error("gcn: non-finite loss at epoch " + std::to_string(epoch));
      adam.step(model.params().values(), grads);
      loss += b.loss * static_cast<double>(end - start);
      preds.insert(preds.end(), b.predictions.begin(), b.predictions.end());
      for (std::size_t i = start; i < end; ++i) labels.push_back(*data.trees[order[i]].label);
    }
    EpochRecord rec;
    rec.epoch = static_cast<int>(epoch);
    rec.split = Split::Train;
    rec.loss = loss / static_cast<double>(order.size());
    rec.metrics = classification_metrics(preds, labels, metrics.num_classes);
    metrics.epochs.push_back(rec);
    metrics.epochs.push_back(gcn_eval(model, data, val, Split::Val, static_cast<int>(epoch)));
    metrics.epochs.push_back(gcn_eval(model, data, test, Split::Test, static_cast<int>(epoch)));
  }
  summarize(metrics, Split::Test, cfg.eval_avg_last);
  return metrics;
}

#define CHAINTREE_INSTANTIATE(T)                                                                     \
  template CsrMatrix<T> normalized_adjacency<T>(const PropagationTree&, Direction);                  \
  template Matrix<T> feature_matrix<T>(const PropagationTree&);                                      \
  template class GcnModel<T>;                                                                        \
  template SmoothnessReport smoothness_report(const GcnModel<T>&, std::span<const PropagationTree* const>, \
                                              std::size_t);                                          \
  template ExperimentMetrics train_gcn(GcnModel<T>&, const Dataset&, const TrainConfig&);

CHAINTREE_INSTANTIATE(float)
CHAINTREE_INSTANTIATE(double)
#undef CHAINTREE_INSTANTIATE

}  // namespace chaintree
