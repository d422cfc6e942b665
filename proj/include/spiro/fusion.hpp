#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spiro/types.hpp"

namespace spiro::fusion {

inline constexpr std::size_t kDemographicCount = 4;  // age, sex, smoking, height_cm

/// Optional z-scoring of the demographic slots, fit on training rows.
struct DemographicScaler {
  bool enabled = false;
  std::array<double, kDemographicCount> mean{0, 0, 0, 0};
  std::array<double, kDemographicCount> sd{1, 1, 1, 1};
};

std::array<double, kDemographicCount> demographic_vector(const Demographics& d);
DemographicScaler fit_demographic_scaler(std::span<const Demographics> train);

/// embedding followed by [age, sex, smoking, height_cm], raw unless the
/// scaler is enabled.
std::vector<double> fuse_features(std::span<const double> embedding, const Demographics& d,
                                  std::size_t expected_embedding_len,
                                  const DemographicScaler& scaler = {});

struct GbdtHyper {
  std::size_t rounds = 200;
  std::size_t max_depth = 6;
  double learning_rate = 0.1;
  double lambda = 1.0;
};

/// Flat tree; node 0 is the root. A leaf has feature == -1. Samples with
/// x[feature] <= threshold go left.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double predict(std::span<const double> x) const;
  std::size_t depth() const;
};

struct GbdtEnsemble {
  std::vector<Tree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;  // log-odds
  std::size_t n_features = 0;
  std::size_t max_depth = 0;
  std::vector<double> train_loss;  // mean log-loss after each round (index 0 = base only)
};

/// Newton boosting on log-loss with exact greedy splits. Thresholds are
/// observed feature values, so predictions depend on feature order only.
GbdtEnsemble gbdt_train(const std::vector<std::vector<double>>& features,
                        std::span<const int> labels, const GbdtHyper& hyper = {});

double gbdt_margin(const GbdtEnsemble& e, std::span<const double> x);
double gbdt_predict(const GbdtEnsemble& e, std::span<const double> x);

nlohmann::json to_json(const GbdtEnsemble& e);
GbdtEnsemble gbdt_from_json(const nlohmann::json& j);

}  // namespace spiro::fusion
