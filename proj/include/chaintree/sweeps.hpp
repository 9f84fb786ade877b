#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaintree/encoder.hpp"
#include "chaintree/gnn.hpp"
#include "chaintree/metrics.hpp"
#include "chaintree/training.hpp"

namespace chaintree {

struct SweepRow {
  std::string variant;  // direction name or layer count
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;
};

struct SweepResult {
  std::size_t num_classes = 0;
  std::vector<SweepRow> rows;

  /// Mean and sample std of accuracy per variant, in first-seen order.
  std::vector<std::pair<std::string, MeanStd>> summary() const;
  double mean_accuracy(const std::string& variant) const;
};

/// CSV: variant_or_layers,seed,acc,prec_0,rec_0,f1_0,...
void write_sweep_csv(const SweepResult& r, std::ostream& out);
nlohmann::json sweep_summary_json(const SweepResult& r);

/// Trains TD, BU, UD and Bi GCNs (otherwise identical to `base`) per seed.
/// `jobs` runs seeds and variants concurrently; results do not depend on it.
template <typename T>
SweepResult directionality_sweep(const Dataset& data, const GcnConfig& base, const TrainConfig& train,
                                 std::span<const std::uint64_t> seeds, std::size_t jobs = 1);

template <typename T>
SweepResult gcn_layer_sweep(const Dataset& data, const GcnConfig& base, std::span<const std::size_t> layers,
                            const TrainConfig& train, std::span<const std::uint64_t> seeds,
                            std::size_t jobs = 1);

template <typename T>
SweepResult encoder_layer_sweep(const Dataset& data, const EncoderConfig& base, const SequenceConfig& seq,
                                std::span<const std::size_t> layers, const TrainConfig& train,
                                std::span<const std::uint64_t> seeds, std::size_t jobs = 1);

}  // namespace chaintree
