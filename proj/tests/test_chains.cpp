#include <doctest.h>

#include <algorithm>
#include <functional>

#include "chaintree/chains.hpp"
#include "chaintree/rng.hpp"
#include "helpers.hpp"

using namespace chaintree;

namespace {

// Recursive enumeration of root-to-leaf paths, children sorted by (time, index).
std::vector<std::vector<int>> all_paths(const PropagationTree& t) {
  const auto n = t.nodes.size();
  std::vector<std::vector<int>> kids(n);
  for (std::size_t i = 1; i < n; ++i) kids[static_cast<std::size_t>(t.nodes[i].parent)].push_back(static_cast<int>(i));
  for (auto& k : kids)
    std::sort(k.begin(), k.end(), [&](int a, int b) {
      const auto ta = t.nodes[static_cast<std::size_t>(a)].time, tb = t.nodes[static_cast<std::size_t>(b)].time;
      return ta < tb || (ta == tb && a < b);
    });
  std::vector<std::vector<int>> out;
  std::vector<int> path;
  std::function<void(int)> walk = [&](int v) {
    path.push_back(v);
    if (kids[static_cast<std::size_t>(v)].empty()) out.push_back(path);
    for (int c : kids[static_cast<std::size_t>(v)]) walk(c);
    path.pop_back();
  };
  for (int c : kids[0]) walk(c);
  return out;
}

}  // namespace

TEST_CASE("a single-node tree has no chains and one token") {
  const auto t = testutil::tree_from_parents({-1}, 2, 1);
  const auto cs = extract_chains(t);
  CHECK(cs.chains.empty());
  CHECK(cs.m == 1);
  CHECK(cs.source_node_index == 0);
}

TEST_CASE("hand-built tree") {
  //      0
  //    /   \
  //   1     4
  //  / \
  // 2   3
  auto t = testutil::tree_from_parents({-1, 0, 1, 1, 0}, 2, 2);
  t.nodes[1].time = 1;
  t.nodes[2].time = 2;
  t.nodes[3].time = 3;
  t.nodes[4].time = 4;
  validate(t);
  const auto cs = extract_chains(t);
  REQUIRE(cs.chains.size() == 3);
  CHECK(cs.chains[0].token_node_indices == std::vector<int>{1, 2});
  CHECK(cs.chains[1].token_node_indices == std::vector<int>{1, 3});
  CHECK(cs.chains[2].token_node_indices == std::vector<int>{4});
  CHECK(cs.chains[0].conv_type == ConvType::Deep);
  CHECK(cs.chains[2].conv_type == ConvType::Shallow);
  CHECK(cs.m == 6);
  for (std::size_t k = 0; k < 3; ++k) CHECK(cs.chains[k].chain_index == k);
}

TEST_CASE("extraction matches recursive enumeration on random trees") {
  Rng rng(99);
  for (int i = 0; i < 300; ++i) {
    const auto t = random_tree(1 + rng.uniform_int(60), 1, rng.next_u64());
    const std::size_t deep_min = 2 + rng.uniform_int(3);
    const auto cs = extract_chains(t, {deep_min});
    const auto want = all_paths(t);
    REQUIRE(cs.chains.size() == want.size());
    std::size_t m = 1;
    for (std::size_t k = 0; k < want.size(); ++k) {
      CHECK(cs.chains[k].token_node_indices == want[k]);
      CHECK((cs.chains[k].conv_type == ConvType::Deep) == (want[k].size() >= deep_min));
      m += want[k].size();
    }
    CHECK(cs.m == m);
  }
}

TEST_CASE("chain invariants") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto t = random_tree(2 + rng.uniform_int(40), 1, rng.next_u64());
    const auto cs = extract_chains(t);
    std::vector<int> leaves_seen(t.size(), 0);
    std::vector<bool> covered(t.size(), false);
    for (const auto& c : cs.chains) {
      REQUIRE_FALSE(c.token_node_indices.empty());
      CHECK(t.nodes[static_cast<std::size_t>(c.token_node_indices.front())].depth == 1);
      for (std::size_t j = 0; j < c.size(); ++j) {
        const auto node = static_cast<std::size_t>(c.token_node_indices[j]);
        covered[node] = true;
        CHECK(t.nodes[node].depth == static_cast<int>(j) + 1);
        if (j > 0) CHECK(t.nodes[node].parent == c.token_node_indices[j - 1]);
      }
      ++leaves_seen[static_cast<std::size_t>(c.token_node_indices.back())];
    }
    const auto kids = children_of(t);
    for (std::size_t v = 1; v < t.size(); ++v) {
      CHECK(covered[v]);
      CHECK(leaves_seen[v] == (kids[v].empty() ? 1 : 0));
    }
  }
}

TEST_CASE("deep threshold validation") {
  ConversationChain c;
  c.token_node_indices = {1, 2, 3};
  CHECK(classify_type(c, 3) == ConvType::Deep);
  CHECK(classify_type(c, 4) == ConvType::Shallow);
  CHECK_THROWS_AS(classify_type(c, 1), std::invalid_argument);
}
