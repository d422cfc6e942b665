#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spiro/autograd.hpp"
#include "spiro/types.hpp"

namespace spiro::baselines {

/// 1 - FEV1/FVC, so higher means higher risk like every other score.
double ratio_score(const SpiroSummary& s);

enum class InputKind { summary_stats, demographic };

std::string_view to_string(InputKind k);
InputKind input_kind_from_string(std::string_view s);

/// summary_stats: [FEV1, FVC, ratio]; demographic: [age, sex, smoking, height_cm].
std::vector<double> mlp_input(InputKind kind, const SpiroSummary& s, const Demographics& d);

struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> sd;

  std::vector<double> apply(const std::vector<double>& x) const;
};

FeatureScaler fit_scaler(const std::vector<std::vector<double>>& rows);

struct MlpHyper {
  std::size_t hidden1 = 32;
  std::size_t hidden2 = 16;
  double lr = 1e-3;
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

/// input -> hidden1 -> GELU -> hidden2 -> GELU -> 1 logit.
struct MlpBaseline {
  InputKind kind = InputKind::summary_stats;
  FeatureScaler scaler;  // training-split statistics
  tc::Var w1, b1, w2, b2, w3, b3;

  std::vector<std::pair<std::string, tc::Var>> named() const;
};

/// Trains on raw inputs (the scaler is fit on them). With a non-empty
/// validation set the epoch with the best validation ROC-AUC is kept.
MlpBaseline mlp_baseline_train(InputKind kind, const std::vector<std::vector<double>>& inputs,
                               const std::vector<int>& labels, const MlpHyper& hyper,
                               const std::vector<std::vector<double>>& val_inputs = {},
                               const std::vector<int>& val_labels = {});

double mlp_baseline_predict(const MlpBaseline& m, const std::vector<double>& raw_input);

}  // namespace spiro::baselines
