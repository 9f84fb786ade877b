#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaintree/encoder.hpp"
#include "chaintree/params.hpp"
#include "chaintree/training.hpp"

namespace chaintree {

// File layout, all integers little-endian:
//   bytes 0-3   magic "CTCK"
//   bytes 4-7   u32 format version (1)
//   bytes 8-15  u64 header length N
//   N bytes     UTF-8 JSON header: {"kind", "dtype" ("float32"|"float64"),
//               "config", "tensors": [{"name","rows","cols","offset"}]}
//   rest        parameter values, row-major, in tensor order

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string kind;
  std::string dtype;
  nlohmann::json config;
  std::vector<ParamBlock> tensors;
};

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                      const ParamSet<T>& params);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Loads values into `params`, whose tensor names and shapes must match the
/// file. Values stored at the other precision are converted.
template <typename T>
CheckpointHeader read_checkpoint(const std::filesystem::path& path, ParamSet<T>& params);

template <typename T>
void save_encoder(const std::filesystem::path& path, const EncoderModel<T>& model, const SequenceConfig& seq);

/// Rebuilds the encoder stored at `path`; the sequence config saved with it
/// is written to *seq when non-null.
template <typename T>
EncoderModel<T> load_encoder(const std::filesystem::path& path, SequenceConfig* seq = nullptr);

}  // namespace chaintree
