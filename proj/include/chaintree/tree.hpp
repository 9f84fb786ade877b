#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace chaintree {

/// Raised for malformed tree files. Carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Raised when a tree breaks a structural invariant.
class InvalidTree : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Node {
  int index = 0;
  int parent = -1;  // -1 for the root
  double time = 0.0;
  int depth = 0;
  std::optional<std::string> text;
  std::vector<double> features;
  // False when features were derived from text by the featurizer; such nodes
  // serialize with "x": null so the file round-trips.
  bool inline_features = true;
};

/// Rooted propagation tree. Node 0 is the source post; every other node's
/// parent has a smaller index.
struct PropagationTree {
  std::string id;
  std::optional<int> label;
  std::vector<Node> nodes;

  std::size_t size() const { return nodes.size(); }
  std::size_t feature_dim() const { return nodes.empty() ? 0 : nodes.front().features.size(); }
};

/// Checks every PropagationTree invariant and fills in Node::depth.
/// Throws InvalidTree naming the first violation.
void validate(PropagationTree& tree);

/// Children of every node, ordered by (time, index).
std::vector<std::vector<int>> children_of(const PropagationTree& tree);

enum class Split { Train, Val, Test, Unlabeled };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct Dataset {
  std::vector<PropagationTree> trees;
  std::vector<Split> splits;  // parallel to trees

  std::size_t size() const { return trees.size(); }
  bool empty() const { return trees.empty(); }
  std::vector<std::size_t> indices(Split s) const;
  void append(PropagationTree tree, Split s);
  /// Highest label + 1 over labeled trees (0 when none are labeled).
  int num_classes() const;
};

struct ParseOptions {
  // Feature dimension used when a node has only text. 0 means "take it from
  // the first inline feature vector in the file".
  std::size_t feature_dim = 0;
  // Fallback for text-only trees when feature_dim is 0 and no inline vector
  // has been seen yet.
  std::size_t text_dim = 0;
  Split split = Split::Train;  // tag for labeled trees; unlabeled -> Unlabeled
};

/// Parses the JSON-Lines tree format; one claim per line.
Dataset parse_dataset(std::istream& in, const ParseOptions& opts = {});
Dataset parse_dataset(const std::filesystem::path& path, const ParseOptions& opts = {});
PropagationTree parse_tree(std::string_view line, std::size_t line_no, const ParseOptions& opts);

/// Canonical one-line JSON (no trailing newline).
std::string serialize_tree(const PropagationTree& tree);
void serialize_dataset(const Dataset& data, std::ostream& out);
void write_dataset(const Dataset& data, const std::filesystem::path& path);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

/// Hashed bag-of-tokens featurizer: lowercase, split on whitespace, FNV-1a
/// 64 per token, bucket = h mod d, sign from bit 63, L2-normalized.
std::vector<double> featurize(std::string_view text, std::size_t d);

struct DepthProfile {
  std::size_t claim_count = 0;
  double avg_reply = 0.0;
  double avg_1level = 0.0;
  double frac_1level = 0.0;
  double avg_2level = 0.0;
  double frac_2level = 0.0;
  double avg_deeper = 0.0;
  double frac_deeper = 0.0;
};

DepthProfile depth_profile(const Dataset& data);

struct GenConfig {
  std::size_t claims = 100;
  double reply_mean = 12.0;
  double reply_dispersion = 0.5;  // sigma of the log-normal reply-count factor
  std::size_t min_replies = 1;
  double p1 = 0.72;
  double p2 = 0.20;
  double p_deeper = 0.08;
  int num_classes = 2;
  double signal = 1.0;  // length of the class direction added on deep-chain nodes
  double noise = 1.0;   // expected norm of the per-node Gaussian noise
  // Class directions come from their own seed so that separately generated
  // pools (e.g. unlabeled pretraining data and a labeled set) share them.
  std::uint64_t direction_seed = 0;
  std::size_t feature_dim = 64;
  // Split sizes, assigned in order train, val, test, unlabeled. If they sum to
  // less than `claims` the remainder goes to train.
  std::size_t val = 10;
  std::size_t test = 20;
  std::size_t unlabeled = 0;
};

/// Synthetic trees with target level fractions and a class signal planted
/// on every node that lies on a conversation chain of length >= 2.
Dataset generate_synthetic(const GenConfig& cfg, std::uint64_t seed);

/// Uniform random recursive tree: node i's parent is drawn from nodes
/// 0..i-1. Features are standard normal; no label.
PropagationTree random_tree(std::size_t nodes, std::size_t feature_dim, std::uint64_t seed);

}  // namespace chaintree
