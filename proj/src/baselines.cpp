#include "spiro/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "spiro/adam.hpp"
#include "spiro/errors.hpp"
#include "spiro/eval.hpp"
#include "spiro/ops.hpp"
#include "spiro/rng.hpp"

namespace spiro::baselines {

using tc::Shape;
using tc::Tensor;
using tc::Var;

double ratio_score(const SpiroSummary& s) {
  require(s.fvc_l > 0.0 && std::isfinite(s.ratio) && s.ratio > 0.0 && s.ratio <= 1.0,
          ErrorKind::degenerate, "ratio score needs FVC > 0 and ratio in (0,1]");
  return 1.0 - s.ratio;
}

std::string_view to_string(InputKind k) {
  return k == InputKind::summary_stats ? "summary_stats" : "demographic";
}

InputKind input_kind_from_string(std::string_view s) {
  if (s == "summary_stats") return InputKind::summary_stats;
  if (s == "demographic") return InputKind::demographic;
  fail(ErrorKind::data, "unknown MLP input kind '" + std::string(s) + "'");
}

std::vector<double> mlp_input(InputKind kind, const SpiroSummary& s, const Demographics& d) {
  if (kind == InputKind::summary_stats) return {s.fev1_l, s.fvc_l, s.ratio};
  return {static_cast<double>(d.age), static_cast<double>(d.sex),
          static_cast<double>(d.smoking), static_cast<double>(d.height_cm)};
}

std::vector<double> FeatureScaler::apply(const std::vector<double>& x) const {
  require(x.size() == mean.size(), ErrorKind::shape,
          "input has " + std::to_string(x.size()) + " features, scaler expects " +
              std::to_string(mean.size()));
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = (x[k] - mean[k]) / sd[k];
  return out;
}

FeatureScaler fit_scaler(const std::vector<std::vector<double>>& rows) {
  require(!rows.empty(), ErrorKind::data, "cannot fit a scaler on no rows");
  const std::size_t k = rows.front().size();
  FeatureScaler s;
  s.mean.assign(k, 0.0);
  s.sd.assign(k, 0.0);
  for (const auto& r : rows) {
    require(r.size() == k, ErrorKind::shape, "ragged input rows");
    for (std::size_t j = 0; j < k; ++j) s.mean[j] += r[j];
  }
  for (double& m : s.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < k; ++j) s.sd[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  }
  for (double& v : s.sd) v = std::max(std::sqrt(v / static_cast<double>(rows.size())), 1e-6);
  return s;
}

std::vector<std::pair<std::string, Var>> MlpBaseline::named() const {
  return {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}, {"w3", w3}, {"b3", b3}};
}

namespace {

constexpr std::uint64_t kMlpInit = 0x4d4c5049;  // "MLPI"
constexpr std::uint64_t kMlpShuffle = 0x4d4c5053;

Tensor xavier(std::size_t out, std::size_t in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(Shape{out, in});
  for (double& v : t.storage()) v = u(rng);
  return t;
}

Var logits(const MlpBaseline& m, const Var& x) {
  const Var h1 = tc::gelu(tc::linear(x, m.w1, m.b1));
  const Var h2 = tc::gelu(tc::linear(h1, m.w2, m.b2));
  return tc::linear(h2, m.w3, m.b3);
}

Var matrix_of(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& idx,
              std::size_t begin, std::size_t end) {
  const std::size_t k = rows.front().size();
  std::vector<double> data;
  data.reserve((end - begin) * k);
  for (std::size_t b = begin; b < end; ++b) {
    data.insert(data.end(), rows[idx[b]].begin(), rows[idx[b]].end());
  }
  return Var::constant(Tensor(Shape{end - begin, k}, std::move(data)));
}

std::vector<Tensor> snapshot(const MlpBaseline& m) {
  std::vector<Tensor> out;
  for (const auto& [_, v] : m.named()) out.push_back(v.value());
  return out;
}

}  // namespace

MlpBaseline mlp_baseline_train(InputKind kind, const std::vector<std::vector<double>>& inputs,
                               const std::vector<int>& labels, const MlpHyper& hp,
                               const std::vector<std::vector<double>>& val_inputs,
                               const std::vector<int>& val_labels) {
  require(!inputs.empty(), ErrorKind::config, "MLP training split is empty");
  require(inputs.size() == labels.size() && val_inputs.size() == val_labels.size(),
          ErrorKind::shape, "MLP inputs and labels differ in length");
  require(hp.epochs >= 1 && hp.batch_size >= 1 && hp.hidden1 >= 1 && hp.hidden2 >= 1,
          ErrorKind::config, "MLP hyperparameters must be positive");
  MlpBaseline m;
  m.kind = kind;
  m.scaler = fit_scaler(inputs);
  const std::size_t k = inputs.front().size();
  Rng rng(derive_seed(hp.seed, kMlpInit, static_cast<std::uint64_t>(kind)));
  m.w1 = Var::parameter(xavier(hp.hidden1, k, rng));
  m.b1 = Var::parameter(Tensor(Shape{hp.hidden1}, 0.0));
  m.w2 = Var::parameter(xavier(hp.hidden2, hp.hidden1, rng));
  m.b2 = Var::parameter(Tensor(Shape{hp.hidden2}, 0.0));
  m.w3 = Var::parameter(xavier(1, hp.hidden2, rng));
  m.b3 = Var::parameter(Tensor(Shape{1}, 0.0));

  std::vector<std::vector<double>> x;
  for (const auto& r : inputs) x.push_back(m.scaler.apply(r));
  std::vector<Var> params;
  for (const auto& [_, v] : m.named()) params.push_back(v);
  tc::AdamState adam = tc::make_adam_state(params);

  const bool select = !val_inputs.empty() &&
                      std::count(val_labels.begin(), val_labels.end(), 1) > 0 &&
                      std::count(val_labels.begin(), val_labels.end(), 0) > 0;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values = snapshot(m);

  std::vector<std::size_t> order(x.size());
  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(hp.seed, kMlpShuffle, epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle() % i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      std::vector<int> y;
      for (std::size_t b = start; b < end; ++b) y.push_back(labels[order[b]]);
      tc::zero_grads(params);
      tc::backward(tc::sigmoid_cross_entropy_mean(logits(m, matrix_of(x, order, start, end)), y));
      tc::adam_step(params, adam, hp.lr);
    }
    if (select) {
      std::vector<double> scores;
      for (const auto& r : val_inputs) scores.push_back(mlp_baseline_predict(m, r));
      const double auc = eval::roc_auc(scores, val_labels);
      if (auc > best) {
        best = auc;
        best_values = snapshot(m);
      }
    }
  }
  if (select) {
    std::size_t i = 0;
    for (auto& [_, v] : m.named()) {
      Var handle = v;
      handle.mutable_value() = best_values[i++];
    }
  }
  return m;
}

double mlp_baseline_predict(const MlpBaseline& m, const std::vector<double>& raw_input) {
  const std::vector<double> z = m.scaler.apply(raw_input);
  const Var x = Var::constant(Tensor(Shape{z.size()}, z));
  return tc::sigmoid(logits(m, x).value()[0]);
}

}  // namespace spiro::baselines
