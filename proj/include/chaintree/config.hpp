#pragma once

#include <string_view>

#include <json.hpp>

#include "chaintree/encoder.hpp"
#include "chaintree/gnn.hpp"
#include "chaintree/training.hpp"
#include "chaintree/tree.hpp"

namespace chaintree {

std::string_view to_string(PairReduction r);
PairReduction pair_reduction_from_string(std::string_view s);

// JSON forms of the configuration structs. from_json only overwrites the
// keys present and rejects unknown keys, so a config file can be layered on
// top of defaults.
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const EmbeddingOptions& c);
void from_json(const nlohmann::json& j, EmbeddingOptions& c);
void to_json(nlohmann::json& j, const SequenceConfig& c);
void from_json(const nlohmann::json& j, SequenceConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const GcnConfig& c);
void from_json(const nlohmann::json& j, GcnConfig& c);
void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

}  // namespace chaintree
