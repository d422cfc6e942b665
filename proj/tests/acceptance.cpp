// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
// Set SPIRO_ACCEPT_ONLY=3,8 to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include <json.hpp>

#include "gradient_suite.hpp"
#include "label_golden.hpp"
#include "spiro/cli.hpp"
#include "spiro/eval.hpp"
#include "spiro/interpret.hpp"
#include "spiro/io.hpp"
#include "spiro/pipeline.hpp"
#include "spiro/synthdata.hpp"

using namespace spiro;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string config_path(const std::string& name) {
  return std::string(SPIRO_CONFIG_DIR) + "/" + name;
}

pipeline::TrainOptions train_options(const std::string& name) {
  return pipeline::options_from_json(json::parse(io::read_file(config_path(name))));
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() /
                     ("spiro_accept_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "cli %s failed: %s", args[0].c_str(), err.str().c_str());
  return code;
}

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : testing::kernel_gradient_errors(101)) {
    if (err >= worst) {
      worst = err;
      worst_name = name;
    }
  }
  const double model_err = testing::model_gradient_error(100, 0, 102);
  if (model_err >= worst) {
    worst = model_err;
    worst_name = "tiny_model";
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0,
          "max rel error " + fmt("%.2e", worst) + " (" + worst_name + "), " + fmt("%.1f", secs) +
              " s"};
}

double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

Verdict metric_oracles() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(2, 12), level(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  double auc_err = 0.0, complement_err = 0.0, brier_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int n = size(rng);
    std::vector<double> s(n), neg(n), p(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = t % 2 ? level(rng) / 5.0 : u(rng);
      neg[i] = -s[i];
      p[i] = u(rng);
      y[i] = coin(rng);
    }
    y[0] = 0;
    y[1] = 1;
    const double a = eval::roc_auc(s, y);
    auc_err = std::max(auc_err, std::abs(a - brute_force_auc(s, y)));
    complement_err = std::max(complement_err, std::abs(a + eval::roc_auc(neg, y) - 1.0));
    double direct = 0.0;
    for (int i = 0; i < n; ++i) direct += (p[i] - y[i]) * (p[i] - y[i]);
    brier_err = std::max(brier_err, std::abs(eval::brier(p, y) - direct / n));
  }
  return {auc_err <= 1e-12 && complement_err <= 1e-12 && brier_err <= 1e-12,
          "auc " + fmt("%.1e", auc_err) + ", complement " + fmt("%.1e", complement_err) +
              ", brier " + fmt("%.1e", brier_err) + " over 1000 instances"};
}

Verdict benchmark() {
  const auto t0 = Clock::now();
  const synth::LabelSpec spec =
      synth::label_spec_from_json(io::read_file(config_path("benchmark_cohort.json")));
  const auto cohort = synth::generate_cohort(2000, spec, 42);
  const data::Dataset ds = data::preprocess_cohort(cohort, data::PreprocessOptions{});
  const pipeline::TrainOptions opts = train_options("benchmark_train.json");
  std::map<std::string, double> mean;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const pipeline::Bundle b = pipeline::train_bundle(ds, Endpoint::copd_risk, opts, seed);
    std::printf("  seed %llu:", static_cast<unsigned long long>(seed));
    for (const auto& r : pipeline::evaluate_bundle(ds, b)) {
      mean[r.method] += r.auc / 5.0;
      std::printf(" %s=%.4f", r.method.c_str(), r.auc);
    }
    std::printf("  (%.0f s)\n", seconds_since(t0));
    std::fflush(stdout);
  }
  const double tr = mean["transformer"], fused = mean["transformer_fused"];
  const double mlp = mean["mlp_summary_stats"], ratio = mean["fev1_fvc_ratio"];
  const double secs = seconds_since(t0);
  const bool ok = tr >= mlp + 0.01 && mlp >= ratio + 0.01 && fused >= tr && tr >= 0.90 &&
                  secs < 1800.0;
  return {ok, "mean AUC fused " + fmt("%.4f", fused) + ", transformer " + fmt("%.4f", tr) +
                  ", summary MLP " + fmt("%.4f", mlp) + ", ratio " + fmt("%.4f", ratio) +
                  ", demographic MLP " + fmt("%.4f", mean["mlp_demographic"]) + "; " +
                  fmt("%.0f", secs) + " s"};
}

preproc::FlowVolumeCurve truncated(const preproc::FlowVolumeCurve& c, std::size_t length) {
  preproc::FlowVolumeCurve out = c;
  out.flow_lps.resize(length, 0.0);
  return out;
}

Verdict padding_invariants() {
  const auto cohort = synth::generate_cohort(60, synth::LabelSpec{}, 7);
  const data::Dataset ds = data::preprocess_cohort(cohort, data::PreprocessOptions{});
  model::ModelConfig c;
  c.d_embed = 16;
  c.length = ds.length;
  const model::ModelParams p = model::init_params(c, 9);
  const preproc::Standardizer& st = ds.standardizer;
  double logit_gap = 0.0, pad_attention = 0.0, sum_gap = 0.0;
  for (const auto& s : ds.samples) {
    const preproc::FlowVolumeCurve z = preproc::apply_standardizer(st, s.curve);
    const auto full = preproc::patchify(z, ds.patch_len);
    const model::ForwardTrace ref = model::forward(full, p, c);
    const std::size_t minimal = (s.curve.valid_len + ds.patch_len - 1) / ds.patch_len * ds.patch_len;
    for (std::size_t len = minimal; len < ds.length; len += 4 * ds.patch_len) {
      const auto seq = preproc::patchify(truncated(z, len), ds.patch_len);
      logit_gap = std::max(logit_gap, std::abs(model::forward(seq, p, c).logit - ref.logit));
      logit_gap = std::max(logit_gap, std::abs(model::predict(p, c, seq).logit - ref.logit));
    }
    const std::size_t L = full.n_patches + 1;
    const std::size_t blocks = ref.attention.size() / (L * L);
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t q = 0; q < L; ++q) {
        for (std::size_t k = 0; k < L; ++k) {
          if (full.mask[k]) pad_attention = std::max(pad_attention, std::abs(ref.attention[(b * L + q) * L + k]));
        }
      }
    }
    for (auto agg : {interpret::Aggregation::mean_then_softmax,
                     interpret::Aggregation::softmax_then_mean}) {
      const auto prof = interpret::cls_attention_profile(ref.attention, full.mask, agg);
      double total = 0.0;
      for (std::size_t i = 0; i < prof.valid_patches; ++i) total += prof.importance[i];
      sum_gap = std::max(sum_gap, std::abs(total - 1.0));
    }
  }
  return {logit_gap < 1e-9 && pad_attention == 0.0 && sum_gap <= 1e-9,
          "max logit change " + fmt("%.1e", logit_gap) + ", max pad attention " +
              fmt("%.1e", pad_attention) + ", importance sum error " + fmt("%.1e", sum_gap) +
              " over " + std::to_string(ds.samples.size()) + " curves"};
}

Verdict preprocessing_fidelity() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> fvc(1.5, 6.0), pef(3.0, 12.0), scoop(0.0, 1.0),
      rise(0.04, 0.12);
  double fvc_err = 0.0, pef_err = 0.0, integral_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    synth::BlowParams p;
    p.fvc_liters = fvc(rng);
    p.pef_lps = pef(rng);
    p.scoop = scoop(rng);
    p.rise_time_s = rise(rng);
    p.noise_sd = 0.0;
    p.duration_s = std::max(6.0, synth::suggested_duration(p));
    const VolumeTimeSeries blow = synth::synth_volume_curve(p, static_cast<std::uint64_t>(t));
    const SpiroSummary s = preproc::compute_summary(blow);
    fvc_err = std::max(fvc_err, std::abs(s.fvc_l - p.fvc_liters) / p.fvc_liters);
    pef_err = std::max(pef_err, std::abs(s.pef_lps - p.pef_lps) / p.pef_lps);
    const auto flow = preproc::volume_to_flow(preproc::smooth_gaussian(preproc::to_liters(blow), 1.0));
    double integral = 0.0;
    for (std::size_t k = 0; k + 1 < flow.size(); ++k) integral += 0.5 * (flow[k] + flow[k + 1]) * blow.dt_s;
    integral_err = std::max(integral_err, std::abs(integral - p.fvc_liters) / p.fvc_liters);
  }
  double smooth_err = 0.0;
  for (double level : {-3.5, 0.0, 1.0, 4123.25}) {
    for (double sigma : {0.5, 1.0, 3.0}) {
      const std::vector<double> flat(300, level);
      for (double v : preproc::smooth_gaussian(flat, sigma)) {
        smooth_err = std::max(smooth_err, std::abs(v - level));
      }
    }
  }
  return {fvc_err < 0.02 && pef_err < 0.02 && integral_err < 0.01 && smooth_err <= 1e-12,
          "FVC " + fmt("%.2f", 100 * fvc_err) + "%, PEF " + fmt("%.2f", 100 * pef_err) +
              "%, integral " + fmt("%.3f", 100 * integral_err) + "%, smoothing " +
              fmt("%.1e", smooth_err) + " (200 noiseless blows)"};
}

std::string pipeline_csv(const fs::path& dir) {
  const std::string d = dir.string();
  io::atomic_write(d + "/train.json",
                   R"({"model": {"d_embed": 16, "layers": 1, "epochs": 3},
                       "mlp": {"epochs": 10}, "gbdt": {"rounds": 20, "max_depth": 3}})");
  if (run_cli({"synth", "--n", "400", "--seed", "11", "--out", d + "/c.ndjson"}) ||
      run_cli({"preprocess", "--in", d + "/c.ndjson", "--out", d + "/c.spfd"}) ||
      run_cli({"train", "--endpoint", "copd_risk", "--data", d + "/c.spfd", "--config",
               d + "/train.json", "--out", d + "/models", "--seeds", "1", "2"}) ||
      run_cli({"eval", "--endpoint", "copd_risk", "--data", d + "/c.spfd", "--models",
               d + "/models", "--csv", d + "/results.csv", "--seeds", "1", "2"})) {
    return {};
  }
  return io::read_file(d + "/results.csv");
}

Verdict determinism() {
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  const std::string csv_a = pipeline_csv(a), csv_b = pipeline_csv(b);
  const bool same_csv = !csv_a.empty() && csv_a == csv_b;

  double gap = 1.0;
  if (same_csv) {
    const std::string ckpt = (a / "models" / "copd_risk_seed1.spfm").string();
    const pipeline::Bundle loaded = pipeline::load_bundle(ckpt);
    const data::Dataset ds = data::load_dataset((a / "c.spfd").string());
    const pipeline::Bundle retrained = pipeline::train_bundle(
        ds, Endpoint::copd_risk,
        pipeline::options_from_json(json::parse(io::read_file((a / "train.json").string()))), 1);
    gap = 0.0;
    for (const auto& s : ds.samples) {
      const auto seq_a = pipeline::sequence_for(s, loaded.standardizer, ds.patch_len);
      const auto seq_b = pipeline::sequence_for(s, retrained.standardizer, ds.patch_len);
      const auto pa = model::predict(loaded.params, loaded.options.model, seq_a);
      const auto pb = model::predict(retrained.params, retrained.options.model, seq_b);
      gap = std::max(gap, std::abs(pa.probability - pb.probability));
      const auto fa = pipeline::fused_features_for(loaded, pa, s.demographics);
      const auto fb = pipeline::fused_features_for(retrained, pb, s.demographics);
      gap = std::max(gap, std::abs(fusion::gbdt_predict(loaded.gbdt, fa) -
                                   fusion::gbdt_predict(retrained.gbdt, fb)));
    }
  }
  fs::remove_all(a);
  fs::remove_all(b);
  return {same_csv && gap <= 1e-9,
          std::string(same_csv ? "results CSV byte-identical" : "results CSV differs") +
              ", checkpoint prediction gap " + fmt("%.1e", gap)};
}

Verdict golden_labels() {
  const auto scenarios =
      testing::load_label_scenarios(std::string(SPIRO_TEST_DATA_DIR) + "/label_scenarios.json");
  std::size_t ok = 0;
  std::string first_bad;
  for (const auto& s : scenarios) {
    const labels::LabelResult r = labels::map_records(s.records, s.spiro_date);
    if (r.labels == s.expected && r.rejected.size() == s.rejected) {
      ++ok;
    } else if (first_bad.empty()) {
      first_bad = s.name;
    }
  }
  return {scenarios.size() == 25 && ok == scenarios.size(),
          std::to_string(ok) + "/" + std::to_string(scenarios.size()) + " scenarios exact" +
              (first_bad.empty() ? "" : ", first mismatch: " + first_bad)};
}

Verdict planted_cohort() {
  const synth::LabelSpec spec =
      synth::label_spec_from_json(io::read_file(config_path("planted_cohort.json")));
  std::size_t after = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const fs::path dir = scratch_dir("planted" + std::to_string(seed));
    const auto cohort = synth::generate_cohort(1000, spec, 100 + seed);
    const data::Dataset ds = data::preprocess_cohort(cohort, data::PreprocessOptions{});
    data::save_dataset((dir / "d.spfd").string(), ds);
    const pipeline::Bundle b =
        pipeline::train_bundle(ds, Endpoint::copd_risk, train_options("planted_train.json"), seed);
    pipeline::save_bundle((dir / "m.spfm").string(), b);
    std::size_t patch = 0, pef = 0;
    bool ok = run_cli({"explain", "--model", (dir / "m.spfm").string(), "--data",
                       (dir / "d.spfd").string(), "--stratify", "none", "--subset", "test",
                       "--out-dir", (dir / "explain").string()}) == 0;
    if (ok) {
      const json summary = json::parse(io::read_file((dir / "explain" / "explain_summary.json").string()));
      patch = summary.at("all").at("most_important_patch");
      pef = summary.at("all").at("markers").at("pef_pos");
      // The patch must start past the PEF sample.
      ok = patch * ds.patch_len > pef;
    }
    after += ok;
    per_seed += (per_seed.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) +
                ": patch " + std::to_string(patch) + " vs PEF sample " + std::to_string(pef);
    fs::remove_all(dir);
  }
  return {after >= 4, std::to_string(after) + "/5 seeds after PEF (" + per_seed + ")"};
}

}  // namespace

int main() {
  std::set<int> only;
  if (const char* env = std::getenv("SPIRO_ACCEPT_ONLY")) {
    std::stringstream ss(env);
    for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
  }
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"metric oracles", metric_oracles},
      {"benchmark ordering", benchmark},
      {"padding and masking invariants", padding_invariants},
      {"preprocessing fidelity", preprocessing_fidelity},
      {"determinism", determinism},
      {"label mapping", golden_labels},
      {"interpretability contract", planted_cohort},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id,
                criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
