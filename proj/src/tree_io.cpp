#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <system_error>

#include <json.hpp>

#include "chaintree/tree.hpp"

namespace chaintree {
namespace {

using nlohmann::json;

double number_field(const json& node, const char* key, std::size_t line_no) {
  auto it = node.find(key);
  if (it == node.end() || !it->is_number())
    throw ParseError(line_no, std::string("missing or non-numeric \"") + key + "\"");
  return it->get<double>();
}

int int_field(const json& node, const char* key, std::size_t line_no) {
  auto it = node.find(key);
  if (it == node.end() || !it->is_number_integer())
    throw ParseError(line_no, std::string("missing or non-integer \"") + key + "\"");
  return it->get<int>();
}

// Dimension implied by the first inline feature vector on the line, if any.
std::size_t inline_dim(const json& nodes) {
  for (const auto& n : nodes) {
    auto it = n.find("x");
    if (it != n.end() && it->is_array() && !it->empty()) return it->size();
  }
  return 0;
}

void append_json_string(std::string& out, const std::string& s) {
  out += json(s).dump();
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

PropagationTree parse_tree(std::string_view line, std::size_t line_no, const ParseOptions& opts) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError(line_no, "expected a JSON object");

  PropagationTree tree;
  auto id = doc.find("id");
  if (id == doc.end() || !id->is_string()) throw ParseError(line_no, "missing string \"id\"");
  tree.id = id->get<std::string>();

  auto label = doc.find("label");
  if (label != doc.end() && !label->is_null()) {
    if (!label->is_number_integer() || label->get<long long>() < 0)
      throw ParseError(line_no, "\"label\" must be a non-negative integer or null");
    tree.label = label->get<int>();
  }

  auto nodes = doc.find("nodes");
  if (nodes == doc.end() || !nodes->is_array() || nodes->empty())
    throw ParseError(line_no, "missing or empty \"nodes\"");

  std::size_t dim = opts.feature_dim;
  if (dim == 0) dim = inline_dim(*nodes);
  if (dim == 0) dim = opts.text_dim;

  tree.nodes.reserve(nodes->size());
  for (const auto& jn : *nodes) {
    if (!jn.is_object()) throw ParseError(line_no, "node must be an object");
    Node node;
    node.index = int_field(jn, "i", line_no);
    node.parent = int_field(jn, "p", line_no);
    node.time = number_field(jn, "t", line_no);
    if (auto t = jn.find("text"); t != jn.end() && !t->is_null()) {
      if (!t->is_string()) throw ParseError(line_no, "\"text\" must be a string or null");
      node.text = t->get<std::string>();
    }
    auto x = jn.find("x");
    if (x != jn.end() && !x->is_null()) {
      if (!x->is_array()) throw ParseError(line_no, "\"x\" must be an array or null");
      node.features.reserve(x->size());
      for (const auto& v : *x) {
        if (!v.is_number()) throw ParseError(line_no, "non-numeric feature value");
        node.features.push_back(v.get<double>());
      }
      node.inline_features = true;
    } else {
      if (dim == 0)
        throw ParseError(line_no, "node " + std::to_string(node.index) +
                                      " has no features and the feature dimension is unknown");
      node.features = featurize(node.text.value_or(""), dim);
      node.inline_features = false;
    }
    tree.nodes.push_back(std::move(node));
  }

  try {
    validate(tree);
  } catch (const InvalidTree& e) {
    throw ParseError(line_no, e.what());
  }
  if (opts.feature_dim != 0 && tree.feature_dim() != opts.feature_dim)
    throw ParseError(line_no, "dimension mismatch: expected " + std::to_string(opts.feature_dim) +
                                  ", got " + std::to_string(tree.feature_dim()));
  return tree;
}

Dataset parse_dataset(std::istream& in, const ParseOptions& opts) {
  Dataset data;
  ParseOptions line_opts = opts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    PropagationTree tree = parse_tree(line, line_no, line_opts);
    // The first tree fixes the dimension for the rest of the file.
    if (line_opts.feature_dim == 0) line_opts.feature_dim = tree.feature_dim();
    data.append(std::move(tree), opts.split);
  }
  return data;
}

Dataset parse_dataset(const std::filesystem::path& path, const ParseOptions& opts) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_dataset(in, opts);
}

std::string serialize_tree(const PropagationTree& tree) {
  std::string out;
  out.reserve(64 + tree.nodes.size() * (16 + tree.feature_dim() * 12));
  out += "{\"id\":";
  append_json_string(out, tree.id);
  out += ",\"label\":";
  out += tree.label ? std::to_string(*tree.label) : "null";
  out += ",\"nodes\":[";
  for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
    const Node& n = tree.nodes[k];
    if (k) out += ',';
    out += "{\"i\":" + std::to_string(n.index);
    out += ",\"p\":" + std::to_string(n.parent);
    out += ",\"t\":" + format_double(n.time);
    out += ",\"text\":";
    if (n.text) append_json_string(out, *n.text);
    else out += "null";
    out += ",\"x\":";
    if (n.inline_features) {
      out += '[';
      for (std::size_t j = 0; j < n.features.size(); ++j) {
        if (j) out += ',';
        out += format_double(n.features[j]);
      }
      out += ']';
    } else {
      out += "null";
    }
    out += '}';
  }
  out += "]}";
  return out;
}

void serialize_dataset(const Dataset& data, std::ostream& out) {
  for (const auto& tree : data.trees) out << serialize_tree(tree) << '\n';
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  serialize_dataset(data, out);
}

}  // namespace chaintree
