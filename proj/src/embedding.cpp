#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "chaintree/embedding.hpp"
#include "chaintree/rng.hpp"

namespace chaintree {
namespace {

// Modified Gram-Schmidt with one re-orthogonalization pass. Returns false
// when a column collapses (numerically rank-deficient draw).
bool orthonormalize_columns(Matrix<double>& g, std::size_t ncols) {
  const std::size_t l = g.rows();
  for (std::size_t c = 0; c < ncols; ++c) {
    double original = 0.0;
    for (std::size_t r = 0; r < l; ++r) original += g(r, c) * g(r, c);
    original = std::sqrt(original);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t r = 0; r < l; ++r) dot += g(r, p) * g(r, c);
        for (std::size_t r = 0; r < l; ++r) g(r, c) -= dot * g(r, p);
      }
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < l; ++r) norm += g(r, c) * g(r, c);
    norm = std::sqrt(norm);
    if (!(norm > 1e-10 * original) || original == 0.0) return false;
    for (std::size_t r = 0; r < l; ++r) g(r, c) /= norm;
  }
  return true;
}

double type_code(ConvType t) {
  switch (t) {
    case ConvType::Source: return 0.0;
    case ConvType::Deep: return 1.0;
    case ConvType::Shallow: return 2.0;
  }
  return 0.0;
}

}  // namespace

ChainIdentifierMatrix sample_identifiers(std::size_t l, std::uint64_t seed, std::size_t rows) {
  if (l == 0) throw std::invalid_argument("sample_identifiers: l must be >= 1");
  if (rows == 0) rows = l;
  if (rows > l) throw std::invalid_argument("sample_identifiers: more rows than l");
  for (std::uint64_t s = seed;; ++s) {
    Rng rng(derive_seed(s, "ids.gaussian", l));
    Matrix<double> g(l, rows);
    for (std::size_t c = 0; c < rows; ++c)
      for (std::size_t r = 0; r < l; ++r) g(r, c) = rng.normal();
    if (!orthonormalize_columns(g, rows)) continue;
    ChainIdentifierMatrix out;
    out.l = l;
    out.seed = s;
    out.C.resize(rows, l);
    for (std::size_t c = 0; c < rows; ++c)
      for (std::size_t r = 0; r < l; ++r) out.C(c, r) = g(r, c);
    return out;
  }
}

std::vector<double> depth_embedding(int dph, std::size_t d) {
  if (dph < 0) throw std::invalid_argument("depth_embedding: negative depth");
  if (d == 0) throw std::invalid_argument("depth_embedding: d must be >= 1");
  std::vector<double> out(d);
  const double x = static_cast<double>(dph);
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t i = j / 2;
    const double freq = std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
    out[j] = (j % 2 == 0) ? std::sin(x / freq) : std::cos(x / freq);
  }
  return out;
}

AugmentedSequence build_inputs(const ConversationChainSet& chains, const PropagationTree& tree,
                               const ChainIdentifierMatrix& ids, const EmbeddingOptions& opts) {
  if (opts.max_tokens < 1) throw std::invalid_argument("build_sequence: max_tokens must be >= 1");
  const std::size_t d = tree.feature_dim();

  std::size_t keep = chains.chains.size();
  std::size_t m = chains.m;
  if (m > opts.max_tokens) {
    std::size_t shortest = std::numeric_limits<std::size_t>::max();
    for (const auto& c : chains.chains) shortest = std::min(shortest, c.size());
    if (opts.max_tokens < 1 + shortest)
      throw std::invalid_argument("build_sequence: max_tokens " + std::to_string(opts.max_tokens) +
                                  " is smaller than 1 + shortest chain");
    while (m > opts.max_tokens) m -= chains.chains[--keep].size();
  }
  if (ids.l < m)
    throw std::invalid_argument("build_sequence: identifier space exhausted (l=" +
                                std::to_string(ids.l) + " < m=" + std::to_string(m) + ")");
  if (ids.C.rows() < keep + 1)
    throw std::invalid_argument("build_sequence: too few identifier rows sampled");

  AugmentedSequence seq;
  seq.m = m;
  seq.d = d;
  seq.l = ids.l;
  seq.dropped_chains = chains.chains.size() - keep;
  seq.S.resize(m, d);
  seq.D.resize(m, d);
  seq.T.resize(m, d);
  seq.ids.resize(keep + 1, ids.l);
  if (opts.use_chain_id)
    std::copy(ids.C.data(), ids.C.data() + (keep + 1) * ids.l, seq.ids.data());
  seq.token_meta.reserve(m);

  auto push = [&](int node, int chain, ConvType type) {
    const Node& n = tree.nodes[static_cast<std::size_t>(node)];
    const std::size_t t = seq.token_meta.size();
    std::copy(n.features.begin(), n.features.end(), seq.S.row(t).begin());
    if (opts.use_depth) {
      const auto code = depth_embedding(n.depth, d);
      std::copy(code.begin(), code.end(), seq.D.row(t).begin());
    }
    if (opts.use_type) {
      const double v = opts.type_scale * type_code(type);
      for (double& a : seq.T.row(t)) a = v;
    }
    seq.token_meta.push_back({node, chain, n.depth, type, static_cast<std::size_t>(chain + 1)});
  };

  push(chains.source_node_index, -1, ConvType::Source);
  for (std::size_t k = 0; k < keep; ++k) {
    const auto& chain = chains.chains[k];
    seq.chain_heads.push_back(seq.token_meta.size());
    for (int node : chain.token_node_indices) push(node, static_cast<int>(k), chain.conv_type);
  }
  return seq;
}

void project(AugmentedSequence& seq, const Matrix<double>& w) {
  const std::size_t d = seq.d;
  if (w.rows() != d + seq.l || w.cols() != d)
    throw std::invalid_argument("build_sequence: projection must be (d + l) x d");
  seq.S_C.resize(seq.m, d);
  for (std::size_t t = 0; t < seq.m; ++t) {
    const auto s = seq.S.row(t);
    const auto c = seq.ids.row(seq.token_meta[t].id_row);
    auto out = seq.S_C.row(t);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t j = 0; j < d; ++j) out[j] += s[k] * w(k, j);
    for (std::size_t k = 0; k < seq.l; ++k)
      for (std::size_t j = 0; j < d; ++j) out[j] += c[k] * w(d + k, j);
  }
  seq.S_CD = seq.S_C;
  for (std::size_t i = 0; i < seq.S_CD.size(); ++i) seq.S_CD.data()[i] += seq.D.data()[i];
  seq.S_CDT = seq.S_CD;
  for (std::size_t i = 0; i < seq.S_CDT.size(); ++i) seq.S_CDT.data()[i] += seq.T.data()[i];
}

AugmentedSequence build_sequence(const ConversationChainSet& chains, const PropagationTree& tree,
                                 const ChainIdentifierMatrix& ids, const Matrix<double>& w,
                                 const EmbeddingOptions& opts) {
  AugmentedSequence seq = build_inputs(chains, tree, ids, opts);
  project(seq, w);
  return seq;
}

AugmentedSequence permute_chain_blocks(const AugmentedSequence& seq,
                                       std::span<const std::size_t> perm) {
  const std::size_t k = seq.chain_heads.size();
  if (perm.size() != k) throw std::invalid_argument("permute_chain_blocks: permutation size");
  std::vector<bool> seen(k, false);
  for (std::size_t p : perm) {
    if (p >= k || seen[p]) throw std::invalid_argument("permute_chain_blocks: not a permutation");
    seen[p] = true;
  }

  // Token order of the result, as positions in `seq`.
  std::vector<std::size_t> order{0};
  std::vector<std::size_t> heads;
  for (std::size_t p : perm) {
    const std::size_t begin = seq.chain_heads[p];
    const std::size_t end = (p + 1 < k) ? seq.chain_heads[p + 1] : seq.m;
    heads.push_back(order.size());
    for (std::size_t t = begin; t < end; ++t) order.push_back(t);
  }

  AugmentedSequence out = seq;
  out.chain_heads = heads;
  auto gather = [&](const Matrix<double>& src, Matrix<double>& dst) {
    if (src.empty()) return;
    for (std::size_t t = 0; t < order.size(); ++t)
      std::copy(src.row(order[t]).begin(), src.row(order[t]).end(), dst.row(t).begin());
  };
  for (std::size_t t = 0; t < order.size(); ++t) out.token_meta[t] = seq.token_meta[order[t]];
  gather(seq.S, out.S);
  gather(seq.D, out.D);
  gather(seq.T, out.T);
  gather(seq.S_C, out.S_C);
  gather(seq.S_CD, out.S_CD);
  gather(seq.S_CDT, out.S_CDT);
  return out;
}

}  // namespace chaintree
