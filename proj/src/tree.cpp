#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "chaintree/tree.hpp"

namespace chaintree {

void validate(PropagationTree& tree) {
  const auto n = tree.nodes.size();
  if (n == 0) throw InvalidTree("tree '" + tree.id + "' has no nodes");
  const std::size_t d = tree.nodes[0].features.size();
  if (d == 0) throw InvalidTree("tree '" + tree.id + "': feature dimension must be > 0");
  for (std::size_t i = 0; i < n; ++i) {
    Node& node = tree.nodes[i];
    if (node.index != static_cast<int>(i))
      throw InvalidTree("node listed at position " + std::to_string(i) + " has index " +
                        std::to_string(node.index));
    if (node.features.size() != d)
      throw InvalidTree("dimension mismatch at node " + std::to_string(i) + ": expected " +
                        std::to_string(d) + ", got " + std::to_string(node.features.size()));
    if (!std::isfinite(node.time)) throw InvalidTree("non-finite time at node " + std::to_string(i));
    if (i == 0) {
      if (node.parent != -1) throw InvalidTree("root (node 0) must have parent -1");
      node.depth = 0;
      continue;
    }
    if (node.parent == -1) throw InvalidTree("multiple roots: node " + std::to_string(i));
    if (node.parent == static_cast<int>(i)) throw InvalidTree("cycle: node " + std::to_string(i) + " is its own parent");
    if (node.parent < -1) throw InvalidTree("invalid parent index at node " + std::to_string(i));
    if (node.parent > static_cast<int>(i))
      throw InvalidTree("forward parent reference: node " + std::to_string(i) + " has parent " +
                        std::to_string(node.parent));
    const Node& parent = tree.nodes[static_cast<std::size_t>(node.parent)];
    if (node.time < parent.time)
      throw InvalidTree("node " + std::to_string(i) + " is earlier than its parent");
    node.depth = parent.depth + 1;
  }
}

std::vector<std::vector<int>> children_of(const PropagationTree& tree) {
  std::vector<std::vector<int>> kids(tree.nodes.size());
  for (const Node& node : tree.nodes)
    if (node.parent >= 0) kids[static_cast<std::size_t>(node.parent)].push_back(node.index);
  // Ties in reply time are broken by node index.
  for (auto& list : kids)
    std::stable_sort(list.begin(), list.end(), [&](int a, int b) {
      const double ta = tree.nodes[static_cast<std::size_t>(a)].time;
      const double tb = tree.nodes[static_cast<std::size_t>(b)].time;
      return ta != tb ? ta < tb : a < b;
    });
  return kids;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unlabeled: return "unlabeled";
  }
  return "unknown";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "unlabeled") return Split::Unlabeled;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

void Dataset::append(PropagationTree tree, Split s) {
  if (!tree.label) s = Split::Unlabeled;
  if (s == Split::Unlabeled) tree.label.reset();
  trees.push_back(std::move(tree));
  splits.push_back(s);
}

int Dataset::num_classes() const {
  int k = 0;
  for (const auto& t : trees)
    if (t.label) k = std::max(k, *t.label + 1);
  return k;
}

DepthProfile depth_profile(const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("depth_profile: empty dataset");
  std::size_t l1 = 0, l2 = 0, deeper = 0;
  for (const auto& tree : data.trees) {
    for (const Node& node : tree.nodes) {
      if (node.depth == 1) ++l1;
      else if (node.depth == 2) ++l2;
      else if (node.depth > 2) ++deeper;
    }
  }
  DepthProfile p;
  p.claim_count = data.size();
  const double claims = static_cast<double>(data.size());
  const std::size_t replies = l1 + l2 + deeper;
  p.avg_reply = static_cast<double>(replies) / claims;
  p.avg_1level = static_cast<double>(l1) / claims;
  p.avg_2level = static_cast<double>(l2) / claims;
  p.avg_deeper = static_cast<double>(deeper) / claims;
  if (replies > 0) {
    const double r = static_cast<double>(replies);
    p.frac_1level = static_cast<double>(l1) / r;
    p.frac_2level = static_cast<double>(l2) / r;
    p.frac_deeper = static_cast<double>(deeper) / r;
  }
  return p;
}

}  // namespace chaintree
