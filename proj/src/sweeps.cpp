#include "chaintree/sweeps.hpp"

#include <algorithm>
#include <functional>
#include <ostream>

namespace chaintree {
namespace {

SweepRow make_row(std::string variant, std::uint64_t seed, const ExperimentMetrics& m) {
  return {std::move(variant), seed, m.final_accuracy, m.final_precision, m.final_recall, m.final_f1};
}

// Runs tasks[i] into rows[i], `jobs` at a time.
SweepResult run_tasks(std::size_t num_classes, const std::vector<std::function<SweepRow()>>& tasks,
                      std::size_t jobs) {
  SweepResult r;
  r.num_classes = num_classes;
  r.rows.resize(tasks.size());
  const auto n = static_cast<std::int64_t>(tasks.size());
  const int threads = static_cast<int>(std::max<std::size_t>(1, jobs));
#pragma omp parallel for schedule(dynamic) num_threads(threads) if (threads > 1)
  for (std::int64_t i = 0; i < n; ++i) r.rows[static_cast<std::size_t>(i)] = tasks[static_cast<std::size_t>(i)]();
  return r;
}

}  // namespace

std::vector<std::pair<std::string, MeanStd>> SweepResult::summary() const {
  std::vector<std::string> order;
  for (const auto& row : rows)
    if (std::find(order.begin(), order.end(), row.variant) == order.end()) order.push_back(row.variant);
  std::vector<std::pair<std::string, MeanStd>> out;
  for (const auto& v : order) {
    std::vector<double> acc;
    for (const auto& row : rows)
      if (row.variant == v) acc.push_back(row.accuracy);
    out.emplace_back(v, mean_std(acc));
  }
  return out;
}

double SweepResult::mean_accuracy(const std::string& variant) const {
  for (const auto& [v, ms] : summary())
    if (v == variant) return ms.mean;
  throw std::out_of_range("no sweep variant '" + variant + "'");
}

void write_sweep_csv(const SweepResult& r, std::ostream& out) {
  out << "variant_or_layers,seed,acc";
  for (std::size_t c = 0; c < r.num_classes; ++c) out << ",prec_" << c << ",rec_" << c << ",f1_" << c;
  out << '\n';
  for (const auto& row : r.rows) {
    out << row.variant << ',' << row.seed << ',' << format_double(row.accuracy);
    for (std::size_t c = 0; c < r.num_classes; ++c)
      out << ',' << format_double(row.precision[c]) << ',' << format_double(row.recall[c]) << ','
          << format_double(row.f1[c]);
    out << '\n';
  }
}

nlohmann::json sweep_summary_json(const SweepResult& r) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [v, ms] : r.summary()) j.push_back({{"variant", v}, {"acc_mean", ms.mean}, {"acc_std", ms.std}});
  return j;
}

template <typename T>
SweepResult directionality_sweep(const Dataset& data, const GcnConfig& base, const TrainConfig& train,
                                 std::span<const std::uint64_t> seeds, std::size_t jobs) {
  std::vector<std::function<SweepRow()>> tasks;
  for (Direction dir : {Direction::TopDown, Direction::BottomUp, Direction::Undirected, Direction::Bi}) {
    for (std::uint64_t seed : seeds) {
      tasks.push_back([&, dir, seed] {
        GcnConfig cfg = base;
        cfg.direction = dir;
        TrainConfig tc = train;
        tc.seed = seed;
        GcnModel<T> model(cfg, seed);
        return make_row(std::string(to_string(dir)), seed, train_gcn(model, data, tc));
      });
    }
  }
  return run_tasks(base.num_classes, tasks, jobs);
}

template <typename T>
SweepResult gcn_layer_sweep(const Dataset& data, const GcnConfig& base, std::span<const std::size_t> layers,
                            const TrainConfig& train, std::span<const std::uint64_t> seeds, std::size_t jobs) {
  std::vector<std::function<SweepRow()>> tasks;
  for (std::size_t L : layers) {
    for (std::uint64_t seed : seeds) {
      tasks.push_back([&, L, seed] {
        GcnConfig cfg = base;
        cfg.layers = L;
        TrainConfig tc = train;
        tc.seed = seed;
        GcnModel<T> model(cfg, seed);
        return make_row(std::to_string(L), seed, train_gcn(model, data, tc));
      });
    }
  }
  return run_tasks(base.num_classes, tasks, jobs);
}

template <typename T>
SweepResult encoder_layer_sweep(const Dataset& data, const EncoderConfig& base, const SequenceConfig& seq,
                                std::span<const std::size_t> layers, const TrainConfig& train,
                                std::span<const std::uint64_t> seeds, std::size_t jobs) {
  std::vector<std::function<SweepRow()>> tasks;
  for (std::size_t L : layers) {
    for (std::uint64_t seed : seeds) {
      tasks.push_back([&, L, seed] {
        EncoderConfig cfg = base;
        cfg.layers = L;
        TrainConfig tc = train;
        tc.seed = seed;
        EncoderModel<T> model(cfg, seed);
        return make_row(std::to_string(L), seed, finetune(model, data, tc, seq));
      });
    }
  }
  return run_tasks(base.num_classes, tasks, jobs);
}

#define CHAINTREE_INSTANTIATE(T)                                                                        \
  template SweepResult directionality_sweep<T>(const Dataset&, const GcnConfig&, const TrainConfig&,    \
                                               std::span<const std::uint64_t>, std::size_t);            \
  template SweepResult gcn_layer_sweep<T>(const Dataset&, const GcnConfig&, std::span<const std::size_t>, \
                                          const TrainConfig&, std::span<const std::uint64_t>, std::size_t); \
  template SweepResult encoder_layer_sweep<T>(const Dataset&, const EncoderConfig&, const SequenceConfig&, \
                                              std::span<const std::size_t>, const TrainConfig&,         \
                                              std::span<const std::uint64_t>, std::size_t);

CHAINTREE_INSTANTIATE(float)
CHAINTREE_INSTANTIATE(double)
#undef CHAINTREE_INSTANTIATE

}  // namespace chaintree
