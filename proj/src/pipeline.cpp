#include "spiro/pipeline.hpp"

#include <set>

#include "spiro/errors.hpp"

namespace spiro::pipeline {

using nlohmann::json;

namespace {

std::string_view to_string(FusedInput f) {
  return f == FusedInput::cls_embedding ? "cls_embedding" : "f_initial";
}

FusedInput fused_input_from(const std::string& s) {
  if (s == "cls_embedding") return FusedInput::cls_embedding;
  if (s == "f_initial") return FusedInput::f_initial;
  fail(ErrorKind::config, "unknown fusion input '" + s + "'");
}

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  require(j.is_object(), ErrorKind::config, where + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    require(known.count(k) == 1, ErrorKind::config, "unknown key '" + k + "' in " + where);
  }
}

json scaler_json(const fusion::DemographicScaler& s) {
  return {{"enabled", s.enabled}, {"mean", s.mean}, {"sd", s.sd}};
}

fusion::DemographicScaler scaler_from(const json& j) {
  fusion::DemographicScaler s;
  s.enabled = j.at("enabled");
  s.mean = j.at("mean");
  s.sd = j.at("sd");
  return s;
}

json history_json(const std::vector<model::EpochRecord>& h) {
  json out = json::array();
  for (const auto& r : h) {
    out.push_back({{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"val_loss", r.val_loss},
                   {"val_auc", std::isnan(r.val_auc) ? json(nullptr) : json(r.val_auc)}});
  }
  return out;
}

std::vector<model::EpochRecord> history_from(const json& j) {
  std::vector<model::EpochRecord> h;
  for (const json& r : j) {
    model::EpochRecord e;
    e.epoch = r.at("epoch");
    e.train_loss = r.at("train_loss");
    e.val_loss = r.at("val_loss");
    e.val_auc = r.at("val_auc").is_null() ? std::nan("") : r.at("val_auc").get<double>();
    h.push_back(e);
  }
  return h;
}

std::vector<int> labels_of(const data::Dataset& ds, const std::vector<std::size_t>& idx,
                           Endpoint e) {
  std::vector<int> y;
  for (std::size_t i : idx) y.push_back(ds.samples[i].labels.get(e));
  return y;
}

}  // namespace

json to_json(const TrainOptions& o) {
  return {{"model", model::to_json(o.model)},
          {"mlp",
           {{"hidden1", o.mlp.hidden1},
            {"hidden2", o.mlp.hidden2},
            {"lr", o.mlp.lr},
            {"epochs", o.mlp.epochs},
            {"batch_size", o.mlp.batch_size}}},
          {"gbdt",
           {{"rounds", o.gbdt.rounds},
            {"max_depth", o.gbdt.max_depth},
            {"learning_rate", o.gbdt.learning_rate},
            {"lambda", o.gbdt.lambda}}},
          {"fusion",
           {{"input", to_string(o.fused_input)},
            {"normalize_demographics", o.normalize_demographics}}}};
}

TrainOptions options_from_json(const json& j, TrainOptions o) {
  check_keys(j, {"model", "mlp", "gbdt", "fusion"}, "config");
  try {
    if (j.contains("model")) o.model = model::config_from_json(j.at("model"), o.model);
    if (j.contains("mlp")) {
      const json& m = j.at("mlp");
      check_keys(m, {"hidden1", "hidden2", "lr", "epochs", "batch_size"}, "mlp");
      o.mlp.hidden1 = m.value("hidden1", o.mlp.hidden1);
      o.mlp.hidden2 = m.value("hidden2", o.mlp.hidden2);
      o.mlp.lr = m.value("lr", o.mlp.lr);
      o.mlp.epochs = m.value("epochs", o.mlp.epochs);
      o.mlp.batch_size = m.value("batch_size", o.mlp.batch_size);
    }
    if (j.contains("gbdt")) {
      const json& g = j.at("gbdt");
      check_keys(g, {"rounds", "max_depth", "learning_rate", "lambda"}, "gbdt");
      o.gbdt.rounds = g.value("rounds", o.gbdt.rounds);
      o.gbdt.max_depth = g.value("max_depth", o.gbdt.max_depth);
      o.gbdt.learning_rate = g.value("learning_rate", o.gbdt.learning_rate);
      o.gbdt.lambda = g.value("lambda", o.gbdt.lambda);
    }
    if (j.contains("fusion")) {
      const json& f = j.at("fusion");
      check_keys(f, {"input", "normalize_demographics"}, "fusion");
      if (f.contains("input")) o.fused_input = fused_input_from(f.at("input"));
      o.normalize_demographics = f.value("normalize_demographics", o.normalize_demographics);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad config value: ") + e.what());
  }
  return o;
}

preproc::PatchSequence sequence_for(const data::Sample& s, const preproc::Standardizer& st,
                                    std::size_t patch_len) {
  return preproc::patchify(preproc::apply_standardizer(st, s.curve), patch_len);
}

std::vector<double> fused_features_for(const Bundle& b, const model::Prediction& pred,
                                       const Demographics& d) {
  if (b.options.fused_input == FusedInput::f_initial) {
    const double logit = pred.logit;
    return fusion::fuse_features(std::span<const double>(&logit, 1), d, 1, b.demo_scaler);
  }
  return fusion::fuse_features(pred.cls_embedding, d, b.options.model.d_embed, b.demo_scaler);
}

Bundle train_bundle(const data::Dataset& ds, Endpoint endpoint, const TrainOptions& opts,
                    std::uint64_t seed, const Log& log) {
  Bundle b;
  b.endpoint = endpoint;
  b.seed = seed;
  b.options = opts;
  b.options.model.seed = seed;
  b.options.mlp.seed = seed;
  require(ds.patch_len == opts.model.patch_len, ErrorKind::config,
          "dataset patch length " + std::to_string(ds.patch_len) + " differs from model P " +
              std::to_string(opts.model.patch_len));
  b.options.model.length = ds.length;
  model::validate(b.options.model);

  const data::Split split = data::split_indices(ds.samples.size(), seed, b.options.model.split);
  require(!split.train.empty() && !split.val.empty() && !split.test.empty(), ErrorKind::config,
          "a split is empty (train " + std::to_string(split.train.size()) + ", val " +
              std::to_string(split.val.size()) + ", test " + std::to_string(split.test.size()) +
              ")");
  b.standardizer = data::fit_on(ds, split.train);

  auto make_set = [&](const std::vector<std::size_t>& idx) {
    model::LabeledSet set;
    for (std::size_t i : idx) set.x.push_back(sequence_for(ds.samples[i], b.standardizer, ds.patch_len));
    set.y = labels_of(ds, idx, endpoint);
    return set;
  };
  const model::LabeledSet train_set = make_set(split.train);
  const model::LabeledSet val_set = make_set(split.val);

  model::TrainResult tr = model::train(train_set, val_set, b.options.model,
                                       [&](const model::EpochRecord& r) {
                                         if (!log) return;
                                         char buf[160];
                                         std::snprintf(buf, sizeof buf,
                                                       "seed %llu epoch %zu train_loss %.4f "
                                                       "val_loss %.4f val_auc %.4f",
                                                       static_cast<unsigned long long>(seed),
                                                       r.epoch, r.train_loss, r.val_loss,
                                                       r.val_auc);
                                         log(buf);
                                       });
  b.params = std::move(tr.params);
  b.history = std::move(tr.history);
  b.best_epoch = tr.best_epoch;

  std::vector<Demographics> train_demo;
  for (std::size_t i : split.train) train_demo.push_back(ds.samples[i].demographics);
  if (opts.normalize_demographics) b.demo_scaler = fusion::fit_demographic_scaler(train_demo);

  std::vector<std::vector<double>> fused;
  const auto preds = model::predict_batch(b.params, b.options.model, train_set.x);
  for (std::size_t k = 0; k < split.train.size(); ++k) {
    fused.push_back(fused_features_for(b, preds[k], ds.samples[split.train[k]].demographics));
  }
  b.gbdt = fusion::gbdt_train(fused, train_set.y, opts.gbdt);

  auto mlp_rows = [&](baselines::InputKind kind, const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i : idx) {
      rows.push_back(baselines::mlp_input(kind, ds.samples[i].summary, ds.samples[i].demographics));
    }
    return rows;
  };
  for (auto kind : {baselines::InputKind::summary_stats, baselines::InputKind::demographic}) {
    baselines::MlpBaseline m =
        baselines::mlp_baseline_train(kind, mlp_rows(kind, split.train), train_set.y,
                                      b.options.mlp, mlp_rows(kind, split.val), val_set.y);
    (kind == baselines::InputKind::summary_stats ? b.summary_mlp : b.demo_mlp) = std::move(m);
  }
  return b;
}

std::vector<eval::TrialResult> evaluate_bundle(const data::Dataset& ds, const Bundle& b) {
  require(ds.patch_len == b.options.model.patch_len && ds.length == b.options.model.length,
          ErrorKind::shape, "dataset T/P does not match the checkpoint");
  const data::Split split = data::split_indices(ds.samples.size(), b.seed, b.options.model.split);
  require(!split.test.empty(), ErrorKind::config, "test split is empty");
  const std::vector<int> y = labels_of(ds, split.test, b.endpoint);

  std::vector<std::vector<double>> scores(std::size(kMethods));
  for (std::size_t i : split.test) {
    const data::Sample& s = ds.samples[i];
    const model::Prediction pred =
        model::predict(b.params, b.options.model, sequence_for(s, b.standardizer, ds.patch_len));
    scores[0].push_back(baselines::ratio_score(s.summary));
    scores[1].push_back(baselines::mlp_baseline_predict(
        b.summary_mlp, baselines::mlp_input(baselines::InputKind::summary_stats, s.summary,
                                            s.demographics)));
    scores[2].push_back(baselines::mlp_baseline_predict(
        b.demo_mlp,
        baselines::mlp_input(baselines::InputKind::demographic, s.summary, s.demographics)));
    scores[3].push_back(pred.probability);
    scores[4].push_back(fusion::gbdt_predict(b.gbdt, fused_features_for(b, pred, s.demographics)));
  }
  std::vector<eval::TrialResult> out;
  for (std::size_t m = 0; m < scores.size(); ++m) {
    out.push_back({b.endpoint, kMethods[m], eval::roc_auc(scores[m], y), eval::brier(scores[m], y),
                   b.seed});
  }
  return out;
}

namespace {

void add_mlp(ckpt::Container& c, const std::string& prefix, const baselines::MlpBaseline& m) {
  for (const auto& [name, v] : m.named()) c.tensors.emplace_back(prefix + name, v.value());
  c.tensors.emplace_back(prefix + "scaler_mean", tc::Tensor::vector(m.scaler.mean));
  c.tensors.emplace_back(prefix + "scaler_sd", tc::Tensor::vector(m.scaler.sd));
}

baselines::MlpBaseline read_mlp(const ckpt::Container& c, const std::string& prefix,
                                baselines::InputKind kind, const baselines::MlpHyper& hp) {
  const std::size_t in = kind == baselines::InputKind::summary_stats ? 3 : 4;
  const std::vector<std::pair<std::string, tc::Shape>> shapes{
      {"w1", {hp.hidden1, in}}, {"b1", {hp.hidden1}},      {"w2", {hp.hidden2, hp.hidden1}},
      {"b2", {hp.hidden2}},     {"w3", {1, hp.hidden2}},   {"b3", {1}},
      {"scaler_mean", {in}},    {"scaler_sd", {in}}};
  for (const auto& [name, shape] : shapes) {
    const tc::Tensor& t = c.tensor(prefix + name);
    require(t.shape() == shape, ErrorKind::shape,
            "tensor '" + prefix + name + "' has shape " + t.shape_string() +
                " but the config implies " + tc::shape_string(shape));
  }
  baselines::MlpBaseline m;
  m.kind = kind;
  m.w1 = tc::Var::parameter(c.tensor(prefix + "w1"));
  m.b1 = tc::Var::parameter(c.tensor(prefix + "b1"));
  m.w2 = tc::Var::parameter(c.tensor(prefix + "w2"));
  m.b2 = tc::Var::parameter(c.tensor(prefix + "b2"));
  m.w3 = tc::Var::parameter(c.tensor(prefix + "w3"));
  m.b3 = tc::Var::parameter(c.tensor(prefix + "b3"));
  m.scaler.mean = c.tensor(prefix + "scaler_mean").storage();
  m.scaler.sd = c.tensor(prefix + "scaler_sd").storage();
  return m;
}

}  // namespace

ckpt::Container bundle_to_container(const Bundle& b) {
  ckpt::Container c;
  c.meta = {{"kind", "spiro-model"},
            {"endpoint", spiro::to_string(b.endpoint)},
            {"seed", b.seed},
            {"options", to_json(b.options)},
            {"best_epoch", b.best_epoch},
            {"demographic_scaler", scaler_json(b.demo_scaler)}};
  for (const auto& [name, v] : b.params.named()) c.tensors.emplace_back("transformer." + name, v.value());
  c.tensors.emplace_back("standardizer.mean", tc::Tensor::vector(b.standardizer.mean));
  c.tensors.emplace_back("standardizer.sd", tc::Tensor::vector(b.standardizer.sd));
  add_mlp(c, "mlp_summary_stats.", b.summary_mlp);
  add_mlp(c, "mlp_demographic.", b.demo_mlp);
  c.sections["gbdt"] = fusion::to_json(b.gbdt).dump();
  c.sections["history"] = history_json(b.history).dump();
  return c;
}

Bundle bundle_from_container(const ckpt::Container& c) {
  Bundle b;
  try {
    require(c.meta.value("kind", "") == "spiro-model", ErrorKind::data,
            "checkpoint is not a spiro model bundle");
    b.endpoint = endpoint_from_string(c.meta.at("endpoint").get<std::string>());
    b.seed = c.meta.at("seed");
    b.options = options_from_json(c.meta.at("options"));
    b.best_epoch = c.meta.at("best_epoch");
    b.demo_scaler = scaler_from(c.meta.at("demographic_scaler"));
    b.gbdt = fusion::gbdt_from_json(json::parse(c.sections.at("gbdt")));
    b.history = history_from(json::parse(c.sections.at("history")));
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, std::string("checkpoint metadata is malformed: ") + e.what());
  } catch (const std::out_of_range&) {
    fail(ErrorKind::integrity, "checkpoint is missing a required section");
  }
  std::vector<std::pair<std::string, tc::Tensor>> tensors;
  for (const auto& [name, t] : c.tensors) {
    if (name.rfind("transformer.", 0) == 0) tensors.emplace_back(name.substr(12), t);
  }
  b.params = model::params_from_named(b.options.model, tensors);
  const std::size_t len = b.options.model.length;
  b.standardizer.mean = c.tensor("standardizer.mean").storage();
  b.standardizer.sd = c.tensor("standardizer.sd").storage();
  require(b.standardizer.mean.size() == len && b.standardizer.sd.size() == len, ErrorKind::shape,
          "tensor 'standardizer.mean' or 'standardizer.sd' does not have length T = " +
              std::to_string(len));
  b.summary_mlp = read_mlp(c, "mlp_summary_stats.", baselines::InputKind::summary_stats,
                           b.options.mlp);
  b.demo_mlp = read_mlp(c, "mlp_demographic.", baselines::InputKind::demographic, b.options.mlp);
  const std::size_t fused_len =
      (b.options.fused_input == FusedInput::f_initial ? 1 : b.options.model.d_embed) +
      fusion::kDemographicCount;
  require(b.gbdt.n_features == fused_len, ErrorKind::shape,
          "ensemble expects " + std::to_string(b.gbdt.n_features) +
              " features but the config implies " + std::to_string(fused_len));
  return b;
}

void save_bundle(const std::string& path, const Bundle& b, ckpt::DType dtype) {
  ckpt::save(path, bundle_to_container(b), dtype);
}

Bundle load_bundle(const std::string& path) { return bundle_from_container(ckpt::load(path)); }

}  // namespace spiro::pipeline
