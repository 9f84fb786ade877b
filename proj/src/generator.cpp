#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "chaintree/rng.hpp"
#include "chaintree/tree.hpp"

namespace chaintree {
namespace {

void check_config(const GenConfig& cfg) {
  if (cfg.claims == 0) throw std::invalid_argument("gen: claim count must be positive");
  if (cfg.reply_mean <= 0.0) throw std::invalid_argument("gen: reply mean must be positive");
  if (cfg.reply_dispersion < 0.0) throw std::invalid_argument("gen: reply dispersion must be >= 0");
  if (cfg.num_classes <= 0) throw std::invalid_argument("gen: class count must be positive");
  if (cfg.feature_dim == 0) throw std::invalid_argument("gen: feature dimension must be positive");
  if (cfg.p1 < 0 || cfg.p2 < 0 || cfg.p_deeper < 0)
    throw std::invalid_argument("gen: level fractions must be non-negative");
  if (std::abs(cfg.p1 + cfg.p2 + cfg.p_deeper - 1.0) > 1e-9)
    throw std::invalid_argument("gen: level fractions must sum to 1");
  if (cfg.val + cfg.test + cfg.unlabeled > cfg.claims)
    throw std::invalid_argument("gen: split sizes exceed claim count");
}

std::vector<std::vector<double>> class_directions(const GenConfig& cfg) {
  Rng rng(derive_seed(cfg.direction_seed, "gen.directions", cfg.feature_dim));
  std::vector<std::vector<double>> dirs(static_cast<std::size_t>(cfg.num_classes));
  for (auto& v : dirs) {
    v.resize(cfg.feature_dim);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : v) {
        x = rng.normal();
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return dirs;
}

std::size_t draw_reply_count(const GenConfig& cfg, Rng& rng) {
  const double s = cfg.reply_dispersion;
  const double factor = std::exp(s * rng.normal() - 0.5 * s * s);
  const auto r = static_cast<std::size_t>(std::llround(cfg.reply_mean * factor));
  return std::max(r, cfg.min_replies);
}

// Builds the reply structure: returns parent and depth per node (node 0 is
// the root), in creation order. Indices are remapped to time order later.
void grow(const GenConfig& cfg, Rng& rng, std::size_t replies, std::vector<int>& parent,
          std::vector<int>& depth) {
  std::size_t n1 = 0, n2 = 0, nd = 0;
  for (std::size_t k = 0; k < replies; ++k) {
    const double u = rng.uniform();
    if (u < cfg.p1) ++n1;
    else if (u < cfg.p1 + cfg.p2) ++n2;
    else ++nd;
  }
  // Level 2 needs a level-1 parent and deeper levels need a level-2 ancestor.
  if (n1 == 0 && replies > 0) {
    if (n2 > 0) --n2;
    else --nd;
    ++n1;
  }
  if (n2 == 0 && nd > 0) {
    --nd;
    ++n2;
  }

  parent.assign(1, -1);
  depth.assign(1, 0);
  std::vector<int> level1, deep;
  for (std::size_t k = 0; k < n1; ++k) {
    level1.push_back(static_cast<int>(parent.size()));
    parent.push_back(0);
    depth.push_back(1);
  }
  for (std::size_t k = 0; k < n2; ++k) {
    const int p = level1[static_cast<std::size_t>(rng.uniform_int(level1.size()))];
    deep.push_back(static_cast<int>(parent.size()));
    parent.push_back(p);
    depth.push_back(2);
  }
  for (std::size_t k = 0; k < nd; ++k) {
    const int p = deep[static_cast<std::size_t>(rng.uniform_int(deep.size()))];
    deep.push_back(static_cast<int>(parent.size()));
    parent.push_back(p);
    depth.push_back(depth[static_cast<std::size_t>(p)] + 1);
  }
}

}  // namespace

Dataset generate_synthetic(const GenConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  const auto dirs = class_directions(cfg);
  const std::size_t d = cfg.feature_dim;
  const double noise_sd = cfg.noise / std::sqrt(static_cast<double>(d));
  const std::size_t n_train = cfg.claims - cfg.val - cfg.test - cfg.unlabeled;

  Dataset data;
  data.trees.reserve(cfg.claims);
  for (std::size_t c = 0; c < cfg.claims; ++c) {
    Rng rng(derive_seed(seed, "gen.tree", c));
    const int label = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_classes)));

    std::vector<int> parent, depth;
    grow(cfg, rng, draw_reply_count(cfg, rng), parent, depth);
    const std::size_t n = parent.size();

    std::vector<double> time(n);
    time[0] = 0.0;
    for (std::size_t i = 1; i < n; ++i) time[i] = depth[i] + rng.uniform();

    // A node is on a chain of length >= 2 iff it is deeper than level 1 or
    // it is a level-1 node with replies.
    std::vector<bool> has_child(n, false);
    for (std::size_t i = 1; i < n; ++i) has_child[static_cast<std::size_t>(parent[i])] = true;

    // Reorder nodes chronologically; parents always precede children because
    // a child's time exceeds its parent's by construction.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin() + 1, order.end(),
                     [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });
    std::vector<int> new_index(n);
    for (std::size_t k = 0; k < n; ++k) new_index[order[k]] = static_cast<int>(k);

    PropagationTree tree;
    tree.id = "syn-" + std::to_string(seed) + "-" + std::to_string(c);
    tree.label = label;
    tree.nodes.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t old = order[k];
      Node& node = tree.nodes[k];
      node.index = static_cast<int>(k);
      node.parent = parent[old] < 0 ? -1 : new_index[static_cast<std::size_t>(parent[old])];
      node.time = time[old];
      node.features.resize(d);
      for (double& x : node.features) x = noise_sd * rng.normal();
      const bool on_deep_chain = depth[old] >= 2 || (depth[old] == 1 && has_child[old]);
      if (on_deep_chain && cfg.signal != 0.0) {
        const auto& mu = dirs[static_cast<std::size_t>(label)];
        for (std::size_t j = 0; j < d; ++j) node.features[j] += cfg.signal * mu[j];
      }
    }
    validate(tree);

    Split split = Split::Train;
    if (c >= n_train + cfg.val + cfg.test) split = Split::Unlabeled;
    else if (c >= n_train + cfg.val) split = Split::Test;
    else if (c >= n_train) split = Split::Val;
    data.append(std::move(tree), split);
  }
  return data;
}

}  // namespace chaintree

namespace chaintree {

PropagationTree random_tree(std::size_t nodes, std::size_t feature_dim, std::uint64_t seed) {
  if (nodes == 0) throw std::invalid_argument("random_tree: need at least one node");
  Rng rng(seed);
  PropagationTree t;
  t.id = "rand-" + std::to_string(seed);
  t.nodes.resize(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    Node& n = t.nodes[i];
    n.index = static_cast<int>(i);
    n.parent = i == 0 ? -1 : static_cast<int>(rng.uniform_int(i));
    n.time = i == 0 ? 0.0 : t.nodes[static_cast<std::size_t>(n.parent)].time + rng.uniform();
    n.features.resize(feature_dim);
    for (double& x : n.features) x = rng.normal();
  }
  validate(t);
  return t;
}

}  // namespace chaintree
