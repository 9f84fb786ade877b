#include "chaintree/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "chaintree/chains.hpp"
#include "chaintree/embedding.hpp"
#include "chaintree/encoder.hpp"
#include "chaintree/gnn.hpp"
#include "chaintree/kernels.hpp"
#include "chaintree/losses.hpp"
#include "chaintree/rng.hpp"
#include "chaintree/tree.hpp"

namespace chaintree {
namespace {

using Paths = std::vector<std::vector<int>>;

void enumerate(const std::vector<std::vector<int>>& kids, int node, std::vector<int>& path, Paths& out) {
  path.push_back(node);
  if (kids[static_cast<std::size_t>(node)].empty()) out.push_back(path);
  for (int c : kids[static_cast<std::size_t>(node)]) enumerate(kids, c, path, out);
  path.pop_back();
}

// Root-to-leaf paths with the root dropped, as an unordered set.
Paths brute_force_chains(const PropagationTree& t) {
  std::vector<std::vector<int>> kids(t.size());
  for (std::size_t i = 1; i < t.size(); ++i) kids[static_cast<std::size_t>(t.nodes[i].parent)].push_back(static_cast<int>(i));
  Paths out;
  std::vector<int> path;
  for (int c : kids[0]) enumerate(kids, c, path, out);
  std::sort(out.begin(), out.end());
  return out;
}

SelftestResult chains_oracle(std::uint64_t seed) {
  for (std::size_t i = 0; i < 200; ++i) {
    Rng rng(derive_seed(seed, "selftest.chains", i));
    const auto t = random_tree(1 + rng.uniform_int(50), 2, rng.next_u64());
    Paths got;
    for (const auto& c : extract_chains(t).chains) got.push_back(c.token_node_indices);
    std::sort(got.begin(), got.end());
    if (got != brute_force_chains(t)) return {"chain extraction oracle", false, "mismatch on tree " + std::to_string(i)};
  }
  return {"chain extraction oracle", true, "200 random trees"};
}

SelftestResult identifiers_orthonormal(std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t l : {1, 8, 64, 256}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto ids = sample_identifiers(l, derive_seed(seed, "selftest.ids", s));
      for (std::size_t a = 0; a < l; ++a)
        for (std::size_t b = 0; b < l; ++b) {
          double dot = 0.0;
          for (std::size_t k = 0; k < l; ++k) dot += ids.C(a, k) * ids.C(b, k);
          worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
        }
    }
  }
  std::ostringstream os;
  os << "max |CC^T - I| = " << worst;
  return {"identifier orthonormality", worst < 1e-5, os.str()};
}

SelftestResult permutation_invariance(std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.d = 16;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.ffn_dim = 32;
  cfg.id_dim = 64;
  EncoderModel<double> model(cfg, seed);
  EncoderWorkspace<double> ws;
  double worst = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    Rng rng(derive_seed(seed, "selftest.perm", i));
    const auto t = random_tree(2 + rng.uniform_int(20), cfg.d, rng.next_u64());
    const auto chains = extract_chains(t);
    const auto ids = sample_identifiers(cfg.id_dim, rng.next_u64(), chains.chains.size() + 1);
    const auto seq = build_inputs(chains, t, ids);
    std::vector<std::size_t> perm(chains.chains.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const auto a = model.classify(model.forward(seq, ws).h_root);
    const auto b = model.classify(model.forward(permute_chain_blocks(seq, perm), ws).h_root);
    for (std::size_t c = 0; c < a.size(); ++c) worst = std::max(worst, std::abs(a[c] - b[c]));
  }
  std::ostringstream os;
  os << "max logit change = " << worst;
  return {"chain permutation invariance", worst < 1e-5, os.str()};
}

SelftestResult round_trip(std::uint64_t seed) {
  GenConfig g;
  g.claims = 50;
  g.feature_dim = 8;
  const auto data = generate_synthetic(g, seed);
  std::stringstream ss;
  serialize_dataset(data, ss);
  const std::string first = ss.str();
  const auto back = parse_dataset(ss);
  std::stringstream again;
  serialize_dataset(back, again);
  return {"tree file round trip", again.str() == first, "50 generated trees"};
}

SelftestResult kernels_match(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "selftest.kernels"));
  auto random = [&](std::size_t r, std::size_t c) {
    Matrix<double> m(r, c);
    for (double& v : m.storage()) v = rng.normal();
    return m;
  };
  const auto a = random(300, 200), b = random(200, 150), bt = random(150, 200), c2 = random(300, 150);
  Matrix<double> s1(300, 150), p1(300, 150), s2(300, 150), p2(300, 150), s3(200, 150), p3(200, 150);
  kernels::serial::gemm_nn<double>(a, b, s1);
  kernels::parallel::gemm_nn<double>(a, b, p1);
  kernels::serial::gemm_nt<double>(a, bt, s2);
  kernels::parallel::gemm_nt<double>(a, bt, p2);
  kernels::serial::gemm_tn<double>(a, c2, s3);
  kernels::parallel::gemm_tn<double>(a, c2, p3);
  const auto tree = random_tree(400, 150, rng.next_u64());
  const auto adj = normalized_adjacency<double>(tree, Direction::Undirected);
  const auto x = feature_matrix<double>(tree);
  Matrix<double> s4(400, 150), p4(400, 150);
  kernels::serial::spmm<double>(adj, x, s4);
  kernels::parallel::spmm<double>(adj, x, p4);
  const bool ok = s1 == p1 && s2 == p2 && s3 == p3 && s4 == p4;
  return {"serial and parallel kernels bit-identical", ok, "gemm_nn, gemm_nt, gemm_tn, spmm"};
}

SelftestResult adjacency_normalization(std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto t = random_tree(1 + i, 1, derive_seed(seed, "selftest.adj", i));
    for (Direction dir : {Direction::TopDown, Direction::BottomUp}) {
      const auto a = normalized_adjacency<double>(t, dir);
      for (std::size_t r = 0; r < a.rows; ++r) {
        double sum = 0.0;
        for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) sum += a.values[k];
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
    const auto u = normalized_adjacency<double>(t, Direction::Undirected);
    const auto ut = transpose(u);
    if (ut.col_idx != u.col_idx || ut.values != u.values)
      return {"adjacency normalization", false, "undirected matrix not symmetric"};
  }
  std::ostringstream os;
  os << "max directed row-sum error = " << worst;
  return {"adjacency normalization", worst < 1e-6, os.str()};
}

SelftestResult infonce_uniform() {
  // Orthogonal unit roots with heads orthogonal to all roots: every score is
  // 0, so each pair's loss is ln K.
  const std::size_t K = 4, d = 8;
  ContrastiveBatch<double> b;
  b.roots.resize(K, d);
  b.heads.resize(K);
  for (std::size_t i = 0; i < K; ++i) {
    b.roots(i, i) = 1.0;
    b.heads[i].resize(1, d);
    b.heads[i](0, K + i) = 1.0;
  }
  const double loss = InfoNce<double>(0.5).evaluate(b).loss;
  std::ostringstream os;
  os << "loss = " << loss << ", ln K = " << std::log(static_cast<double>(K));
  return {"InfoNCE uniform case", std::abs(loss - std::log(static_cast<double>(K))) < 1e-12, os.str()};
}

SelftestResult parameter_count_formula() {
  for (std::size_t layers : {1, 3}) {
    EncoderConfig cfg;
    cfg.layers = layers;
    EncoderModel<float> m(cfg, 0);
    if (m.params().size() != parameter_count(cfg))
      return {"parameter count", false, std::to_string(m.params().size()) + " vs " + std::to_string(parameter_count(cfg))};
  }
  return {"parameter count", true, "matches closed form"};
}

SelftestResult featurizer_norm() {
  const auto v = featurize("Breaking NEWS  the claim is false", 64);
  double n = 0.0;
  for (double x : v) n += x * x;
  const auto empty = featurize("   ", 64);
  const bool zero = std::all_of(empty.begin(), empty.end(), [](double x) { return x == 0.0; });
  return {"featurizer normalization", std::abs(n - 1.0) < 1e-12 && zero, "unit norm, empty text -> zero"};
}

}  // namespace

std::vector<SelftestResult> run_selftest(std::uint64_t seed) {
  std::vector<std::function<SelftestResult()>> checks = {
      [&] { return chains_oracle(seed); },
      [&] { return identifiers_orthonormal(seed); },
      [&] { return permutation_invariance(seed); },
      [&] { return round_trip(seed); },
      [&] { return kernels_match(seed); },
      [&] { return adjacency_normalization(seed); },
      infonce_uniform,
      parameter_count_formula,
      featurizer_norm,
  };
  std::vector<SelftestResult> out;
  for (const auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"(exception)", false, e.what()});
    }
  }
  return out;
}

}  // namespace chaintree
