#include "chaintree/config.hpp"

#include <initializer_list>
#include <stdexcept>
#include <string>

namespace chaintree {
namespace {

using nlohmann::json;

void check_keys(const json& j, std::string_view what, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (auto key : keys) known = known || key == k;
    if (!known) throw std::invalid_argument(std::string(what) + ": unknown key '" + k + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

std::string_view to_string(PairReduction r) {
  return r == PairReduction::SumPerTree ? "sum_per_tree" : "mean_over_pairs";
}

PairReduction pair_reduction_from_string(std::string_view s) {
  if (s == "mean_over_pairs") return PairReduction::MeanOverPairs;
  if (s == "sum_per_tree") return PairReduction::SumPerTree;
  throw std::invalid_argument("reduction must be 'mean_over_pairs' or 'sum_per_tree', got '" + std::string(s) + "'");
}

void to_json(json& j, const EncoderConfig& c) {
  j = {{"d", c.d},         {"heads", c.heads},   {"layers", c.layers},          {"ffn_dim", c.ffn_dim},
       {"dropout", c.dropout}, {"id_dim", c.id_dim}, {"num_classes", c.num_classes}};
}

void from_json(const json& j, EncoderConfig& c) {
  check_keys(j, "encoder", {"d", "heads", "layers", "ffn_dim", "dropout", "id_dim", "num_classes"});
  read(j, "d", c.d);
  read(j, "heads", c.heads);
  read(j, "layers", c.layers);
  read(j, "ffn_dim", c.ffn_dim);
  read(j, "dropout", c.dropout);
  read(j, "id_dim", c.id_dim);
  read(j, "num_classes", c.num_classes);
}

void to_json(json& j, const EmbeddingOptions& c) {
  j = {{"use_chain_id", c.use_chain_id}, {"use_depth", c.use_depth}, {"use_type", c.use_type},
       {"type_scale", c.type_scale},     {"max_tokens", c.max_tokens}};
}

void from_json(const json& j, EmbeddingOptions& c) {
  check_keys(j, "embedding", {"use_chain_id", "use_depth", "use_type", "type_scale", "max_tokens"});
  read(j, "use_chain_id", c.use_chain_id);
  read(j, "use_depth", c.use_depth);
  read(j, "use_type", c.use_type);
  read(j, "type_scale", c.type_scale);
  read(j, "max_tokens", c.max_tokens);
}

void to_json(json& j, const SequenceConfig& c) {
  j = {{"embedding", c.embed}, {"deep_min_len", c.deep_min_len}, {"id_resample", to_string(c.id_resample)}};
}

void from_json(const json& j, SequenceConfig& c) {
  check_keys(j, "sequence", {"embedding", "deep_min_len", "id_resample"});
  if (j.contains("embedding")) from_json(j.at("embedding"), c.embed);
  read(j, "deep_min_len", c.deep_min_len);
  if (j.contains("id_resample")) c.id_resample = id_resample_from_string(j.at("id_resample").get<std::string>());
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"lr", c.learning_rate},
       {"epochs", c.epochs},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"lambda_unsup", c.lambda_unsup},
       {"tau", c.tau},
       {"seed", c.seed},
       {"eval_avg_last", c.eval_avg_last},
       {"reduction", to_string(c.reduction)}};
}

void from_json(const json& j, TrainConfig& c) {
  check_keys(j, "train", {"batch_size", "lr", "epochs", "beta1", "beta2", "eps", "lambda_unsup", "tau", "seed",
                          "eval_avg_last", "reduction"});
  read(j, "batch_size", c.batch_size);
  read(j, "lr", c.learning_rate);
  read(j, "epochs", c.epochs);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "eps", c.eps);
  read(j, "lambda_unsup", c.lambda_unsup);
  read(j, "tau", c.tau);
  read(j, "seed", c.seed);
  read(j, "eval_avg_last", c.eval_avg_last);
  if (j.contains("reduction")) c.reduction = pair_reduction_from_string(j.at("reduction").get<std::string>());
}

void to_json(json& j, const GcnConfig& c) {
  j = {{"layers", c.layers},
       {"hidden", c.hidden},
       {"input_dim", c.input_dim},
       {"num_classes", c.num_classes},
       {"direction", to_string(c.direction)},
       {"readout", to_string(c.readout)}};
}

void from_json(const json& j, GcnConfig& c) {
  check_keys(j, "gcn", {"layers", "hidden", "input_dim", "num_classes", "direction", "readout"});
  read(j, "layers", c.layers);
  read(j, "hidden", c.hidden);
  read(j, "input_dim", c.input_dim);
  read(j, "num_classes", c.num_classes);
  if (j.contains("direction")) c.direction = direction_from_string(j.at("direction").get<std::string>());
  if (j.contains("readout")) c.readout = readout_from_string(j.at("readout").get<std::string>());
}

void to_json(json& j, const GenConfig& c) {
  j = {{"claims", c.claims},
       {"reply_mean", c.reply_mean},
       {"reply_dispersion", c.reply_dispersion},
       {"min_replies", c.min_replies},
       {"p1", c.p1},
       {"p2", c.p2},
       {"p_deeper", c.p_deeper},
       {"num_classes", c.num_classes},
       {"signal", c.signal},
       {"noise", c.noise},
       {"direction_seed", c.direction_seed},
       {"feature_dim", c.feature_dim},
       {"val", c.val},
       {"test", c.test},
       {"unlabeled", c.unlabeled}};
}

void from_json(const json& j, GenConfig& c) {
  check_keys(j, "gen", {"claims", "reply_mean", "reply_dispersion", "min_replies", "p1", "p2", "p_deeper",
                        "num_classes", "signal", "noise", "direction_seed", "feature_dim", "val", "test",
                        "unlabeled"});
  read(j, "claims", c.claims);
  read(j, "reply_mean", c.reply_mean);
  read(j, "reply_dispersion", c.reply_dispersion);
  read(j, "min_replies", c.min_replies);
  read(j, "p1", c.p1);
  read(j, "p2", c.p2);
  read(j, "p_deeper", c.p_deeper);
  read(j, "num_classes", c.num_classes);
  read(j, "signal", c.signal);
  read(j, "noise", c.noise);
  read(j, "direction_seed", c.direction_seed);
  read(j, "feature_dim", c.feature_dim);
  read(j, "val", c.val);
  read(j, "test", c.test);
  read(j, "unlabeled", c.unlabeled);
}

}  // namespace chaintree
