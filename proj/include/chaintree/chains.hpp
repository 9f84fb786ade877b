#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "chaintree/tree.hpp"

namespace chaintree {

enum class ConvType { Source, Deep, Shallow };

std::string_view to_string(ConvType t);

/// One conversation thread: a 1-level node down to one leaf beneath it.
struct ConversationChain {
  std::vector<int> token_node_indices;
  std::size_t chain_index = 0;
  ConvType conv_type = ConvType::Shallow;

  std::size_t size() const { return token_node_indices.size(); }
};

struct ConversationChainSet {
  int source_node_index = 0;
  std::vector<ConversationChain> chains;
  std::size_t m = 1;  // tokens: source + all chain tokens
};

struct ChainOptions {
  std::size_t deep_min_len = 2;
};

/// Deep when the chain has at least `deep_min_len` tokens, Shallow otherwise.
ConvType classify_type(const ConversationChain& chain, std::size_t deep_min_len = 2);

/// All root-to-leaf paths with the root dropped, ordered depth-first with
/// siblings visited by (time, index). Branch-point nodes appear once per
/// leaf beneath them.
ConversationChainSet extract_chains(const PropagationTree& tree, const ChainOptions& opts = {});

}  // namespace chaintree
