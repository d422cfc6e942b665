#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spiro/types.hpp"

namespace spiro::eval {

/// Mann-Whitney AUC with midrank ties: P(pos > neg) + 0.5 P(tie).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Mean squared difference between probabilities and binary labels.
double brier(std::span<const double> probs, std::span<const int> labels);

struct TrialResult {
  Endpoint endpoint = Endpoint::copd_risk;
  std::string method;
  double auc = 0.0;
  double brier = 0.0;
  std::uint64_t seed = 0;
};

struct AggregateRow {
  Endpoint endpoint = Endpoint::copd_risk;
  std::string method;
  std::string metric;  // "roc_auc" or "brier"
  double mean = 0.0;
  double sd = 0.0;     // sample sd (n - 1)
  std::size_t n = 0;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

MeanSd mean_sd(std::span<const double> values);

/// Groups by (endpoint, method) in first-seen order. Every group must hold
/// exactly the seeds in `expected_seeds`; missing or duplicated seeds are a
/// data error naming them. An empty `expected_seeds` accepts any set of
/// at least two distinct seeds.
std::vector<AggregateRow> trial_aggregate(std::span<const TrialResult> results,
                                          std::span<const std::uint64_t> expected_seeds);

/// CSV with header endpoint,method,metric,mean,sd. Numbers use %.6f.
std::string to_csv(std::span<const AggregateRow> rows);

}  // namespace spiro::eval
