#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "chaintree/rng.hpp"
#include "chaintree/tree.hpp"

namespace testutil {

// Tree with parents drawn uniformly from earlier nodes and no time order
// constraints beyond the parent's.
inline chaintree::PropagationTree tree_from_parents(const std::vector<int>& parent, std::size_t d,
                                                    std::uint64_t seed) {
  chaintree::Rng rng(seed);
  chaintree::PropagationTree t;
  t.id = "t" + std::to_string(seed);
  t.label = 0;
  for (std::size_t i = 0; i < parent.size(); ++i) {
    chaintree::Node n;
    n.index = static_cast<int>(i);
    n.parent = parent[i];
    n.time = parent[i] < 0 ? 0.0 : t.nodes[static_cast<std::size_t>(parent[i])].time + rng.uniform();
    n.features.resize(d);
    for (auto& x : n.features) x = rng.normal();
    t.nodes.push_back(n);
  }
  chaintree::validate(t);
  return t;
}

inline chaintree::PropagationTree path_tree(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::vector<int> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<int>(i) - 1;
  return tree_from_parents(p, d, seed);
}

inline chaintree::PropagationTree star_tree(std::size_t leaves, std::size_t d, std::uint64_t seed) {
  std::vector<int> p(leaves + 1, 0);
  p[0] = -1;
  return tree_from_parents(p, d, seed);
}

}  // namespace testutil
