#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "chaintree/tree.hpp"

namespace chaintree {

struct ClassMetrics {
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;  // per class
};

/// Confusion-matrix metrics. Precision (recall) of a class with no predicted
/// (true) members is 0; F1 is 0 when precision + recall is 0.
ClassMetrics classification_metrics(std::span<const int> predicted, std::span<const int> labels,
                                    std::size_t num_classes);

struct EpochRecord {
  int epoch = 0;
  Split split = Split::Train;
  double loss = 0.0;
  ClassMetrics metrics;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

struct ExperimentMetrics {
  std::size_t num_classes = 0;
  std::vector<EpochRecord> epochs;
  // Mean of the last `eval_avg_last` test epochs.
  double final_accuracy = 0.0;
  std::vector<double> final_precision, final_recall, final_f1;
  double final_loss = 0.0;
};

/// Fills the final_* fields from the last `last` records of `split`.
void summarize(ExperimentMetrics& m, Split split, std::size_t last);

/// CSV: epoch,split,loss,acc,prec_0,rec_0,f1_0,...
void write_metrics_csv(const ExperimentMetrics& m, std::ostream& out);

}  // namespace chaintree
