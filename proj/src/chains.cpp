#include <stdexcept>

#include "chaintree/chains.hpp"

namespace chaintree {

std::string_view to_string(ConvType t) {
  switch (t) {
    case ConvType::Source: return "source";
    case ConvType::Deep: return "deep";
    case ConvType::Shallow: return "shallow";
  }
  return "unknown";
}

ConvType classify_type(const ConversationChain& chain, std::size_t deep_min_len) {
  if (deep_min_len < 2) throw std::invalid_argument("deep_min_len must be >= 2");
  return chain.size() >= deep_min_len ? ConvType::Deep : ConvType::Shallow;
}

ConversationChainSet extract_chains(const PropagationTree& tree, const ChainOptions& opts) {
  ConversationChainSet out;
  const auto kids = children_of(tree);

  // Iterative DFS; `next` holds the position in each path node's child list.
  std::vector<int> path;
  std::vector<std::size_t> next;
  for (int head : kids[0]) {
    path.assign(1, head);
    next.assign(1, 0);
    while (!path.empty()) {
      const auto node = static_cast<std::size_t>(path.back());
      if (kids[node].empty()) {
        ConversationChain chain;
        chain.token_node_indices = path;
        chain.chain_index = out.chains.size();
        chain.conv_type = classify_type(chain, opts.deep_min_len);
        out.m += chain.size();
        out.chains.push_back(std::move(chain));
      }
      if (next.back() < kids[node].size()) {
        const int child = kids[node][next.back()++];
        path.push_back(child);
        next.push_back(0);
      } else {
        path.pop_back();
        next.pop_back();
      }
    }
  }
  return out;
}

}  // namespace chaintree
