#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spiro/autograd.hpp"
#include "spiro/preproc.hpp"
#include "spiro/rng.hpp"

namespace spiro::model {

/// Defaults are the published hyperparameters; desk-scale runs override
/// d_embed and lr from a config file.
struct ModelConfig {
  std::size_t patch_len = 30;
  std::size_t d_embed = 200;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_mult = 4;
  double dropout = 0.1;
  double lr = 1e-5;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::uint64_t seed = 1;
  std::size_t length = 1050;  // T, a multiple of patch_len
  std::size_t head_hidden = 64;

  std::size_t n_patches() const { return length / patch_len; }
};

void validate(const ModelConfig& c);
nlohmann::json to_json(const ModelConfig& c);
/// Fields absent from `j` keep their values in `base`; unknown keys are a
/// config error.
ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {});

struct EncoderLayer {
  tc::Var wq, bq, wk, bk, wv, bv, wo, bo;
  tc::Var ln1_g, ln1_b;
  tc::Var w1, b1, w2, b2;
  tc::Var ln2_g, ln2_b;
};

struct ModelParams {
  tc::Var w_proj;  // [d, P]
  tc::Var b_proj;  // [d]
  tc::Var cls;     // [1, d]
  tc::Var pos;     // [N+1, d]
  std::vector<EncoderLayer> encoder;
  tc::Var head_w1, head_b1, head_w2, head_b2;

  /// Every learnable tensor in a fixed order with a stable name.
  std::vector<std::pair<std::string, tc::Var>> named() const;
  std::vector<tc::Var> list() const;
  /// Independent copy of all values (no shared nodes).
  ModelParams clone() const;
};

/// Xavier-uniform projection/encoder/first head weights, N(0, 0.02) CLS,
/// positions and final head weight, zero biases, unit layer-norm gains.
ModelParams init_params(const ModelConfig& c, std::uint64_t seed);

/// Shape of every tensor implied by the config, in named() order.
std::vector<std::pair<std::string, tc::Shape>> expected_shapes(const ModelConfig& c);

/// Rebuilds params from named tensors, checking each against the config.
ModelParams params_from_named(const ModelConfig& c,
                              const std::vector<std::pair<std::string, tc::Tensor>>& tensors);

/// Z' = [CLS + PE_0; W p_i + b + PE_i]. The sequence may have fewer patches
/// than the positional table (the missing ones are padding) but not more.
tc::Var embed_patches(const preproc::PatchSequence& seq, const ModelParams& p);

struct ForwardTrace {
  tc::Tensor hidden;                // [N+1, d]
  std::vector<double> cls_embedding;  // H[0]
  double logit = 0.0;
  double probability = 0.5;
  tc::Tensor attention;             // [layers, heads, N+1, N+1]
};

/// Evaluation-mode pass over the full (padded) sequence, keeping attention.
ForwardTrace forward(const preproc::PatchSequence& seq, const ModelParams& p,
                     const ModelConfig& c);

struct Prediction {
  double probability = 0.5;
  double logit = 0.0;
  std::vector<double> cls_embedding;
};

/// Evaluation-mode prediction. Padding tokens are dropped before the encoder;
/// since masked keys get exactly zero weight this equals forward().
Prediction predict(const ModelParams& p, const ModelConfig& c, const preproc::PatchSequence& seq);
std::vector<Prediction> predict_batch(const ModelParams& p, const ModelConfig& c,
                                      const std::vector<preproc::PatchSequence>& seqs);

/// Training-mode loss graph for one example (dropout active when rng given).
tc::Var example_loss(const ModelParams& p, const ModelConfig& c, const preproc::PatchSequence& seq,
                     int label, Rng* dropout_rng);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;  // NaN when the validation split holds one class
};

struct TrainResult {
  ModelParams params;  // parameters of the selected epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

struct LabeledSet {
  std::vector<preproc::PatchSequence> x;
  std::vector<int> y;
};

/// Adam on mean per-batch BCE. Batches come from a per-epoch seeded shuffle.
/// Selection: best validation ROC-AUC (lowest validation loss if the
/// validation split has a single class); ties keep the earlier epoch.
TrainResult train(const LabeledSet& train_set, const LabeledSet& val_set, const ModelConfig& c,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace spiro::model
