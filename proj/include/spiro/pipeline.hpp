#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spiro/baselines.hpp"
#include "spiro/checkpoint.hpp"
#include "spiro/dataset.hpp"
#include "spiro/eval.hpp"
#include "spiro/fusion.hpp"
#include "spiro/model.hpp"

namespace spiro::pipeline {

enum class FusedInput { cls_embedding, f_initial };

struct TrainOptions {
  model::ModelConfig model;
  baselines::MlpHyper mlp;
  fusion::GbdtHyper gbdt;
  FusedInput fused_input = FusedInput::cls_embedding;
  bool normalize_demographics = false;
};

nlohmann::json to_json(const TrainOptions& o);
/// Sections "model", "mlp", "gbdt", "fusion"; missing keys keep `base`.
TrainOptions options_from_json(const nlohmann::json& j, TrainOptions base = {});

/// Everything trained for one (endpoint, seed) trial.
struct Bundle {
  Endpoint endpoint = Endpoint::copd_risk;
  std::uint64_t seed = 1;
  TrainOptions options;
  preproc::Standardizer standardizer;  // fit on this seed's training split
  model::ModelParams params;
  std::vector<model::EpochRecord> history;
  std::size_t best_epoch = 0;
  fusion::GbdtEnsemble gbdt;
  fusion::DemographicScaler demo_scaler;
  baselines::MlpBaseline summary_mlp;
  baselines::MlpBaseline demo_mlp;
};

using Log = std::function<void(const std::string&)>;

preproc::PatchSequence sequence_for(const data::Sample& s, const preproc::Standardizer& std,
                                    std::size_t patch_len);

/// Splits with `seed`, refits the standardizer on the training part and
/// trains the transformer, the fused GBDT and both MLP baselines.
Bundle train_bundle(const data::Dataset& ds, Endpoint endpoint, const TrainOptions& opts,
                    std::uint64_t seed, const Log& log = {});

inline constexpr const char* kMethods[] = {"fev1_fvc_ratio", "mlp_summary_stats", "mlp_demographic",
                                           "transformer", "transformer_fused"};

/// Scores every method on the bundle's test split.
std::vector<eval::TrialResult> evaluate_bundle(const data::Dataset& ds, const Bundle& b);

/// Fused feature vector for one sample (used by evaluation and tests).
std::vector<double> fused_features_for(const Bundle& b, const model::Prediction& pred,
                                       const Demographics& d);

ckpt::Container bundle_to_container(const Bundle& b);
Bundle bundle_from_container(const ckpt::Container& c);
void save_bundle(const std::string& path, const Bundle& b, ckpt::DType dtype = ckpt::DType::f64);
Bundle load_bundle(const std::string& path);

}  // namespace spiro::pipeline
