#include <cmath>
#include <ostream>
#include <stdexcept>

#include "chaintree/metrics.hpp"

namespace chaintree {

ClassMetrics classification_metrics(std::span<const int> predicted, std::span<const int> labels,
                                    std::size_t num_classes) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("metrics: size mismatch");
  std::vector<std::size_t> tp(num_classes, 0), pred_count(num_classes, 0), true_count(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto p = static_cast<std::size_t>(predicted[i]);
    const auto y = static_cast<std::size_t>(labels[i]);
    if (p >= num_classes || y >= num_classes) throw std::invalid_argument("metrics: class out of range");
    ++pred_count[p];
    ++true_count[y];
    if (p == y) {
      ++tp[y];
      ++correct;
    }
  }
  ClassMetrics m;
  m.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double prec = pred_count[c] ? static_cast<double>(tp[c]) / static_cast<double>(pred_count[c]) : 0.0;
    const double rec = true_count[c] ? static_cast<double>(tp[c]) / static_cast<double>(true_count[c]) : 0.0;
    m.precision.push_back(prec);
    m.recall.push_back(rec);
    m.f1.push_back(prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0);
  }
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

void summarize(ExperimentMetrics& m, Split split, std::size_t last) {
  std::vector<const EpochRecord*> recs;
  for (const auto& r : m.epochs)
    if (r.split == split) recs.push_back(&r);
  if (recs.empty()) return;
  const std::size_t k = std::min(last == 0 ? recs.size() : last, recs.size());
  const std::size_t C = m.num_classes;
  m.final_accuracy = 0.0;
  m.final_loss = 0.0;
  m.final_precision.assign(C, 0.0);
  m.final_recall.assign(C, 0.0);
  m.final_f1.assign(C, 0.0);
  for (std::size_t i = recs.size() - k; i < recs.size(); ++i) {
    const auto& r = *recs[i];
    m.final_accuracy += r.metrics.accuracy / static_cast<double>(k);
    m.final_loss += r.loss / static_cast<double>(k);
    for (std::size_t c = 0; c < C; ++c) {
      m.final_precision[c] += r.metrics.precision[c] / static_cast<double>(k);
      m.final_recall[c] += r.metrics.recall[c] / static_cast<double>(k);
      m.final_f1[c] += r.metrics.f1[c] / static_cast<double>(k);
    }
  }
}

void write_metrics_csv(const ExperimentMetrics& m, std::ostream& out) {
  out << "epoch,split,loss,acc";
  for (std::size_t c = 0; c < m.num_classes; ++c) out << ",prec_" << c << ",rec_" << c << ",f1_" << c;
  out << '\n';
  for (const auto& r : m.epochs) {
    out << r.epoch << ',' << to_string(r.split) << ',' << format_double(r.loss) << ','
        << format_double(r.metrics.accuracy);
    for (std::size_t c = 0; c < m.num_classes; ++c)
      out << ',' << format_double(r.metrics.precision[c]) << ',' << format_double(r.metrics.recall[c])
          << ',' << format_double(r.metrics.f1[c]);
    out << '\n';
  }
}

}  // namespace chaintree
