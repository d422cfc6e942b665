#include "spiro/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "spiro/errors.hpp"

namespace spiro::eval {

namespace {

void check_labels(std::size_t n, std::span<const int> labels) {
  require(n == labels.size(), ErrorKind::shape,
          "scores/labels length mismatch: " + std::to_string(n) + " vs " +
              std::to_string(labels.size()));
  for (int y : labels) {
    require(y == 0 || y == 1, ErrorKind::data, "labels must be 0 or 1, got " + std::to_string(y));
  }
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores.size(), labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks (1-based) of the positives.
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::degenerate,
          "ROC-AUC is undefined with a single class (" + std::to_string(n_pos) + " positives, " +
              std::to_string(n_neg) + " negatives)");
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double brier(std::span<const double> probs, std::span<const int> labels) {
  check_labels(probs.size(), labels);
  require(!probs.empty(), ErrorKind::degenerate, "Brier score of an empty list");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    require(probs[i] >= 0.0 && probs[i] <= 1.0, ErrorKind::data,
            "probability outside [0,1] at index " + std::to_string(i));
    const double d = probs[i] - labels[i];
    sum += d * d;
  }
  return sum / static_cast<double>(probs.size());
}

MeanSd mean_sd(std::span<const double> values) {
  require(!values.empty(), ErrorKind::degenerate, "mean of an empty list");
  // Sorting first makes the result independent of trial order bit for bit.
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  // Summing offsets from the first value keeps identical trials exact.
  double sum = 0.0;
  for (double x : v) sum += x - v.front();
  const double mean = v.front() + sum / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::vector<AggregateRow> trial_aggregate(std::span<const TrialResult> results,
                                          std::span<const std::uint64_t> expected_seeds) {
  require(!results.empty(), ErrorKind::data, "no trial results to aggregate");
  using Key = std::pair<Endpoint, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<const TrialResult*>> groups;
  for (const TrialResult& r : results) {
    const Key key{r.endpoint, r.method};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&r);
  }
  const std::set<std::uint64_t> expected(expected_seeds.begin(), expected_seeds.end());
  std::vector<AggregateRow> rows;
  for (const Key& key : order) {
    const auto& group = groups[key];
    const std::string label = std::string(to_string(key.first)) + "/" + key.second;
    std::multiset<std::uint64_t> seen;
    for (const TrialResult* r : group) seen.insert(r->seed);
    for (std::uint64_t s : seen) {
      require(seen.count(s) == 1, ErrorKind::data,
              label + ": seed " + std::to_string(s) + " appears more than once");
    }
    if (expected.empty()) {
      require(seen.size() >= 2, ErrorKind::data, label + ": need at least two seeds");
    } else {
      std::string missing;
      for (std::uint64_t s : expected) {
        if (!seen.count(s)) missing += (missing.empty() ? "" : ",") + std::to_string(s);
      }
      require(missing.empty(), ErrorKind::data, label + ": missing seeds " + missing);
      for (std::uint64_t s : seen) {
        require(expected.count(s) == 1, ErrorKind::data,
                label + ": unexpected seed " + std::to_string(s));
      }
    }
    std::vector<double> aucs;
    std::vector<double> briers;
    for (const TrialResult* r : group) {
      aucs.push_back(r->auc);
      briers.push_back(r->brier);
    }
    const MeanSd a = mean_sd(aucs);
    const MeanSd b = mean_sd(briers);
    rows.push_back({key.first, key.second, "roc_auc", a.mean, a.sd, group.size()});
    rows.push_back({key.first, key.second, "brier", b.mean, b.sd, group.size()});
  }
  return rows;
}

std::string to_csv(std::span<const AggregateRow> rows) {
  std::string out = "endpoint,method,metric,mean,sd\n";
  char buf[64];
  for (const AggregateRow& r : rows) {
    out += std::string(to_string(r.endpoint)) + "," + r.method + "," + r.metric + ",";
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", r.mean, r.sd);
    out += buf;
  }
  return out;
}

}  // namespace spiro::eval
