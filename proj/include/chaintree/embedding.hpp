#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "chaintree/chains.hpp"
#include "chaintree/matrix.hpp"
#include "chaintree/tree.hpp"

namespace chaintree {

/// Orthonormal chain identifiers. Row r of `C` is identifier r; row 0 is
/// reserved for the source token and row k+1 belongs to chain k.
///
/// The rows are the leading columns of Q from a Gram-Schmidt QR of an l x l
/// standard Gaussian drawn column by column, so asking for fewer rows yields
/// a prefix of the full matrix for the same seed.
struct ChainIdentifierMatrix {
  std::size_t l = 0;
  std::uint64_t seed = 0;
  Matrix<double> C;  // rows x l
};

/// `rows == 0` means all l rows.
ChainIdentifierMatrix sample_identifiers(std::size_t l, std::uint64_t seed, std::size_t rows = 0);

/// Sinusoidal depth code: even dims sin(dph / 10000^(2i/d)), odd dims cos.
std::vector<double> depth_embedding(int dph, std::size_t d);

struct EmbeddingOptions {
  bool use_chain_id = true;
  bool use_depth = true;
  bool use_type = true;
  double type_scale = 1.0;
  std::size_t max_tokens = 256;
};

struct TokenMeta {
  int node = 0;
  int chain = -1;  // -1 for the source token
  int depth = 0;
  ConvType type = ConvType::Source;
  std::size_t id_row = 0;
};

/// Token matrix of one tree at every augmentation stage. S, ids, D and T are
/// what the encoder consumes; S_C, S_CD and S_CDT are filled only when a
/// projection is supplied.
struct AugmentedSequence {
  std::size_t m = 0;
  std::size_t d = 0;
  std::size_t l = 0;
  Matrix<double> S;         // m x d node features
  Matrix<double> ids;       // (kept chains + 1) x l identifier rows
  Matrix<double> D;    // m x d depth codes (zero when disabled)
  Matrix<double> T;    // m x d type codes (zero when disabled)
  Matrix<double> S_C;
  Matrix<double> S_CD;
  Matrix<double> S_CDT;
  std::vector<TokenMeta> token_meta;
  std::vector<std::size_t> chain_heads;  // token position of each chain's first token
  std::size_t dropped_chains = 0;
};

/// Everything except the projected stages. Truncates by dropping whole
/// chains from the end when m would exceed max_tokens.
AugmentedSequence build_inputs(const ConversationChainSet& chains, const PropagationTree& tree,
                               const ChainIdentifierMatrix& ids, const EmbeddingOptions& opts = {});

/// Full assembly with projection w ((d + l) x d):
/// S_C = [S, C] w, S_CD = S_C + D, S_CDT = S_CD + T.
AugmentedSequence build_sequence(const ConversationChainSet& chains, const PropagationTree& tree,
                                 const ChainIdentifierMatrix& ids, const Matrix<double>& w,
                                 const EmbeddingOptions& opts = {});

/// Fills S_C, S_CD and S_CDT of `seq` from w.
void project(AugmentedSequence& seq, const Matrix<double>& w);

/// Reorders the chain token blocks; chain k of the result is chain perm[k]
/// of the input. Identifier rows travel with their chains.
AugmentedSequence permute_chain_blocks(const AugmentedSequence& seq,
                                       std::span<const std::size_t> perm);

}  // namespace chaintree
