#include "spiro/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "spiro/dataset.hpp"
#include "spiro/interpret.hpp"
#include "spiro/io.hpp"
#include "spiro/pipeline.hpp"
#include "spiro/synthdata.hpp"

#ifndef SPIRO_VERSION
#define SPIRO_VERSION "0.0.0-unknown"
#endif

namespace spiro::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string version() { return SPIRO_VERSION; }

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return kExitUsage;
    case ErrorKind::parameter:
    case ErrorKind::config:
    case ErrorKind::shape:
    case ErrorKind::degenerate:
    case ErrorKind::data:
    case ErrorKind::integrity: return kExitData;
    case ErrorKind::numeric:
    case ErrorKind::io: return kExitOther;
  }
  return kExitOther;
}

namespace {

void write_error(std::ostream& err, const std::string& kind, int code, const std::string& msg) {
  err << json{{"error", kind}, {"exit_code", code}, {"message", msg}}.dump() << "\n";
}

void require_input(const std::string& path) {
  require(fs::exists(path), ErrorKind::io, "input path '" + path + "' does not exist");
}

std::string file_hash(const std::string& path) { return io::hex64(io::fnv1a64(io::read_file(path))); }

// Everything needed to rerun a command; contains no timestamps so reruns
// write identical manifests.
void write_run_manifest(const std::string& path, const std::string& command,
                        const std::vector<std::string>& args, const json& config,
                        const std::vector<std::uint64_t>& seeds,
                        const std::vector<std::string>& inputs, const json& extra = json::object()) {
  json hashes = json::object();
  for (const auto& in : inputs) hashes[in] = file_hash(in);
  json m{{"tool", "spiro"},   {"version", version()}, {"command", command},
         {"args", args},      {"config", config},     {"seeds", seeds},
         {"input_fnv1a64", hashes}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  io::atomic_write(path, m.dump(2) + "\n");
}

std::vector<std::uint64_t> default_seeds() { return {1, 2, 3, 4, 5}; }

struct Context {
  std::vector<std::string> args;
  std::ostream& out;
  std::ostream& err;
  bool verbose = false;

  void log(const std::string& line) const {
    if (verbose) err << line << "\n";
  }
};

// ---- synth ----
struct SynthArgs {
  std::size_t n = 0;
  std::uint64_t seed = 1;
  std::string out;
  std::string label_spec;
};

void cmd_synth(const SynthArgs& a, const Context& ctx) {
  synth::LabelSpec spec;
  std::vector<std::string> inputs;
  if (!a.label_spec.empty()) {
    require_input(a.label_spec);
    spec = synth::label_spec_from_json(io::read_file(a.label_spec));
    inputs.push_back(a.label_spec);
  }
  require(a.n >= 1, ErrorKind::parameter, "--n must be at least 1");
  const auto cohort = synth::generate_cohort(a.n, spec, a.seed);
  std::ostringstream ss;
  synth::write_cohort(ss, cohort);
  io::atomic_write(a.out, ss.str());
  write_run_manifest(a.out + ".run.json", "synth", ctx.args,
                     {{"n", a.n}, {"label_spec", json::parse(synth::label_spec_to_json(spec))}},
                     {a.seed}, inputs);
  ctx.log("wrote " + std::to_string(cohort.size()) + " records to " + a.out);
}

// ---- preprocess ----
struct PreprocessArgs {
  std::string in;
  std::string out;
  data::PreprocessOptions opts;
};

void cmd_preprocess(const PreprocessArgs& a, const Context& ctx) {
  require_input(a.in);
  std::ifstream f(a.in);
  const auto cohort = synth::read_cohort(f);
  data::PreprocessReport rep;
  const data::Dataset ds = data::preprocess_cohort(cohort, a.opts, &rep);
  data::save_dataset(a.out, ds);
  const json report{{"input", rep.input},       {"invalid_code", rep.invalid_code},
                    {"degenerate", rep.degenerate}, {"qc_dropped", rep.qc_dropped},
                    {"too_long", rep.too_long}, {"kept", rep.kept},
                    {"dropped", rep.messages}};
  write_run_manifest(a.out + ".run.json", "preprocess", ctx.args,
                     {{"dv_l", a.opts.dv_l},
                      {"t_max", a.opts.t_max},
                      {"patch_len", a.opts.patch_len},
                      {"sigma", a.opts.sigma},
                      {"split", a.opts.split}},
                     {a.opts.split_seed}, {a.in}, {{"report", report}});
  ctx.log("kept " + std::to_string(rep.kept) + " of " + std::to_string(rep.input) + " records");
}

// ---- train ----
struct TrainArgs {
  std::vector<std::string> endpoints;
  std::string data;
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  bool f32 = false;
  // CLI overrides (applied after the config file).
  std::optional<std::size_t> epochs, d_embed, batch_size, layers, heads;
  std::optional<double> lr, dropout;
};

std::string checkpoint_name(Endpoint e, std::uint64_t seed) {
  return std::string(to_string(e)) + "_seed" + std::to_string(seed) + ".spfm";
}

void cmd_train(const TrainArgs& a, const Context& ctx) {
  require_input(a.data);
  pipeline::TrainOptions opts;
  std::vector<std::string> inputs{a.data};
  if (!a.config.empty()) {
    require_input(a.config);
    json j;
    try {
      j = json::parse(io::read_file(a.config));
    } catch (const json::exception& e) {
      fail(ErrorKind::config, "config file is not valid JSON: " + std::string(e.what()));
    }
    opts = pipeline::options_from_json(j, opts);
    inputs.push_back(a.config);
  }
  if (a.epochs) opts.model.epochs = *a.epochs;
  if (a.d_embed) opts.model.d_embed = *a.d_embed;
  if (a.batch_size) opts.model.batch_size = *a.batch_size;
  if (a.layers) opts.model.layers = *a.layers;
  if (a.heads) opts.model.heads = *a.heads;
  if (a.lr) opts.model.lr = *a.lr;
  if (a.dropout) opts.model.dropout = *a.dropout;

  const data::Dataset ds = data::load_dataset(a.data);
  const std::vector<std::uint64_t> seeds = a.seeds.empty() ? default_seeds() : a.seeds;
  fs::create_directories(a.out);
  json outputs = json::array();
  for (const auto& name : a.endpoints) {
    const Endpoint e = endpoint_from_string(name);
    for (std::uint64_t seed : seeds) {
      const pipeline::Bundle b =
          pipeline::train_bundle(ds, e, opts, seed, [&](const std::string& l) { ctx.log(l); });
      const std::string path = (fs::path(a.out) / checkpoint_name(e, seed)).string();
      pipeline::save_bundle(path, b, a.f32 ? ckpt::DType::f32 : ckpt::DType::f64);
      outputs.push_back(path);
      ctx.log("wrote " + path + " (best epoch " + std::to_string(b.best_epoch) + ")");
    }
  }
  write_run_manifest((fs::path(a.out) / "run_manifest.json").string(), "train", ctx.args,
                     pipeline::to_json(opts), seeds, inputs,
                     {{"endpoints", a.endpoints}, {"outputs", outputs}});
}

// ---- eval ----
struct EvalArgs {
  std::vector<std::string> endpoints;
  std::string data;
  std::vector<std::string> models;
  std::string csv;
  std::vector<std::uint64_t> seeds;
};

void cmd_eval(const EvalArgs& a, const Context& ctx) {
  require_input(a.data);
  std::vector<std::string> paths;
  for (const auto& m : a.models) {
    require_input(m);
    if (fs::is_directory(m)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(m)) {
        if (entry.path().extension() == ".spfm") found.push_back(entry.path().string());
      }
      std::sort(found.begin(), found.end());
      paths.insert(paths.end(), found.begin(), found.end());
    } else {
      paths.push_back(m);
    }
  }
  const data::Dataset ds = data::load_dataset(a.data);
  const std::vector<std::uint64_t> seeds = a.seeds.empty() ? default_seeds() : a.seeds;

  std::vector<Endpoint> endpoints;
  for (const auto& n : a.endpoints) endpoints.push_back(endpoint_from_string(n));
  // (endpoint, seed) -> checkpoint
  std::map<std::pair<Endpoint, std::uint64_t>, std::string> by_key;
  for (const auto& p : paths) {
    const ckpt::Container c = ckpt::load(p);
    require(c.meta.contains("endpoint") && c.meta.contains("seed"), ErrorKind::data,
            p + " is not a model checkpoint");
    const Endpoint e = endpoint_from_string(c.meta.at("endpoint").get<std::string>());
    const std::uint64_t s = c.meta.at("seed");
    if (std::find(endpoints.begin(), endpoints.end(), e) == endpoints.end()) continue;
    require(by_key.emplace(std::pair{e, s}, p).second, ErrorKind::data,
            "two checkpoints for " + std::string(to_string(e)) + " seed " + std::to_string(s));
  }
  for (Endpoint e : endpoints) {
    std::string missing;
    for (std::uint64_t s : seeds) {
      if (!by_key.count({e, s})) missing += (missing.empty() ? "" : ",") + std::to_string(s);
    }
    require(missing.empty(), ErrorKind::data,
            "no trained model for endpoint " + std::string(to_string(e)) + " seed(s) " + missing);
  }

  std::vector<eval::TrialResult> results;
  std::vector<std::string> inputs{a.data};
  for (Endpoint e : endpoints) {
    for (std::uint64_t s : seeds) {
      const std::string& p = by_key.at({e, s});
      const pipeline::Bundle b = pipeline::load_bundle(p);
      auto r = pipeline::evaluate_bundle(ds, b);
      results.insert(results.end(), r.begin(), r.end());
      inputs.push_back(p);
      ctx.log("evaluated " + p);
    }
  }
  const auto rows = eval::trial_aggregate(results, seeds);
  io::atomic_write(a.csv, eval::to_csv(rows));
  json trials = json::array();
  for (const auto& r : results) {
    trials.push_back({{"endpoint", to_string(r.endpoint)},
                      {"method", r.method},
                      {"seed", r.seed},
                      {"roc_auc", r.auc},
                      {"brier", r.brier}});
  }
  write_run_manifest(a.csv + ".run.json", "eval", ctx.args, {{"endpoints", a.endpoints}}, seeds,
                     inputs, {{"trials", trials}});
  ctx.out << eval::to_csv(rows);
}

// ---- explain ----
struct ExplainArgs {
  std::string model;
  std::string data;
  std::string stratify = "gold";
  std::string ref_eq;
  std::string out_dir;
  std::string subset = "test";
  std::string aggregation = "mean_then_softmax";
};

void cmd_explain(const ExplainArgs& a, const Context& ctx) {
  require_input(a.model);
  require_input(a.data);
  require(a.stratify == "gold" || a.stratify == "none", ErrorKind::usage,
          "--stratify must be 'gold' or 'none'");
  require(a.subset == "test" || a.subset == "all", ErrorKind::usage,
          "--subset must be 'test' or 'all'");
  std::vector<std::string> inputs{a.model, a.data};
  interpret::ReferenceEquation ref;
  if (a.stratify == "gold") {
    require(!a.ref_eq.empty(), ErrorKind::usage, "--stratify gold needs --ref-eq");
    require_input(a.ref_eq);
    ref = interpret::reference_from_json(io::read_file(a.ref_eq));
    inputs.push_back(a.ref_eq);
  }
  const interpret::Aggregation agg = interpret::aggregation_from_string(a.aggregation);
  const pipeline::Bundle b = pipeline::load_bundle(a.model);
  const data::Dataset ds = data::load_dataset(a.data);
  require(ds.length == b.options.model.length && ds.patch_len == b.options.model.patch_len,
          ErrorKind::shape, "dataset T/P does not match the checkpoint");

  std::vector<std::size_t> idx;
  if (a.subset == "test") {
    idx = data::split_indices(ds.samples.size(), b.seed, b.options.model.split).test;
  } else {
    idx.resize(ds.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  require(!idx.empty(), ErrorKind::data, "no samples to explain");

  struct Group {
    std::vector<interpret::AttentionProfile> profiles;
    std::vector<std::size_t> members;
  };
  std::map<std::string, Group> groups;
  for (std::size_t i : idx) {
    const data::Sample& s = ds.samples[i];
    const auto seq = pipeline::sequence_for(s, b.standardizer, ds.patch_len);
    const model::ForwardTrace t = model::forward(seq, b.params, b.options.model);
    const std::string tag = a.stratify == "gold"
                                ? std::string(interpret::to_string(
                                      interpret::gold_stratify(s.summary, s.demographics, ref)))
                                : "all";
    groups[tag].profiles.push_back(interpret::cls_attention_profile(t.attention, seq.mask, agg));
    groups[tag].members.push_back(i);
  }

  fs::create_directories(a.out_dir);
  json summary = json::object();
  for (const auto& [tag, g] : groups) {
    const interpret::AttentionProfile mean = interpret::cohort_mean_profile(g.profiles);
    // Representative curve: per-position mean flow over members covering it.
    preproc::FlowVolumeCurve curve;
    curve.dv_l = ds.dv_l;
    curve.flow_lps.assign(ds.length, 0.0);
    std::vector<std::size_t> count(ds.length, 0);
    double fvc = 0.0;
    std::vector<double> pef_pos;
    for (std::size_t i : g.members) {
      const auto& c = ds.samples[i].curve;
      curve.valid_len = std::max(curve.valid_len, c.valid_len);
      for (std::size_t k = 0; k < c.valid_len; ++k) {
        curve.flow_lps[k] += c.flow_lps[k];
        ++count[k];
      }
      fvc += ds.samples[i].summary.fvc_l;
      pef_pos.push_back(static_cast<double>(
          interpret::locate_markers(ds.samples[i].summary, c).pef_pos));
    }
    for (std::size_t k = 0; k < ds.length; ++k) {
      if (count[k]) curve.flow_lps[k] /= static_cast<double>(count[k]);
    }
    SpiroSummary rep;
    rep.fvc_l = fvc / static_cast<double>(g.members.size());
    const interpret::MarkerSet markers = interpret::locate_markers(rep, curve);
    const std::string base =
        (fs::path(a.out_dir) / (std::string(to_string(b.endpoint)) + "_" + tag)).string();
    const auto paths = interpret::overlay_export(curve, mean, markers, base);
    double mean_pef = 0.0;
    for (double p : pef_pos) mean_pef += p;
    mean_pef /= static_cast<double>(pef_pos.size());
    summary[tag] = {{"patients", g.members.size()},
                    {"most_important_patch", mean.most_important_patch},
                    {"importance", mean.importance},
                    {"mean_patient_pef_pos", mean_pef},
                    {"markers",
                     {{"pef_pos", markers.pef_pos},
                      {"fef25_pos", markers.fef25_pos},
                      {"fef50_pos", markers.fef50_pos},
                      {"fef75_pos", markers.fef75_pos}}},
                    {"csv", paths.csv},
                    {"svg", paths.svg}};
    ctx.log(tag + ": " + std::to_string(g.members.size()) + " patients, most important patch " +
            std::to_string(mean.most_important_patch));
  }
  io::atomic_write((fs::path(a.out_dir) / "explain_summary.json").string(), summary.dump(2) + "\n");
  write_run_manifest((fs::path(a.out_dir) / "run_manifest.json").string(), "explain", ctx.args,
                     {{"stratify", a.stratify},
                      {"subset", a.subset},
                      {"aggregation", a.aggregation}},
                     {b.seed}, inputs);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spirogram flow-volume transformer pipeline", "spiro"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", version());
  Context ctx{args, out, err};
  app.add_flag("--verbose", ctx.verbose, "Progress messages on stderr");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort (NDJSON)");
  synth->add_option("--n", sa.n, "Number of records")->required();
  synth->add_option("--seed", sa.seed, "Random seed");
  synth->add_option("--out", sa.out, "Output NDJSON path")->required();
  synth->add_option("--label-spec", sa.label_spec, "Label/population spec JSON");

  PreprocessArgs pa;
  auto* prep = app.add_subcommand("preprocess", "Convert blows to a flow-volume dataset");
  prep->add_option("--in", pa.in, "Cohort NDJSON")->required();
  prep->add_option("--out", pa.out, "Dataset output path")->required();
  prep->add_option("--dv", pa.opts.dv_l, "Volume grid step (L)");
  prep->add_option("--tmax", pa.opts.t_max, "Maximum valid curve length (samples)");
  prep->add_option("--patch", pa.opts.patch_len, "Patch length P");
  prep->add_option("--sigma", pa.opts.sigma, "Gaussian smoothing sigma (samples)");
  prep->add_option("--split-seed", pa.opts.split_seed, "Seed of the split stored with the dataset");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train all methods for each seed");
  train->add_option("--endpoint", ta.endpoints, "Endpoint(s)")->required();
  train->add_option("--data", ta.data, "Preprocessed dataset")->required();
  train->add_option("--config", ta.config, "Config JSON");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--seeds", ta.seeds, "Trial seeds (default 1 2 3 4 5)");
  train->add_flag("--f32", ta.f32, "Store tensors at single precision");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--d-embed", ta.d_embed);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--layers", ta.layers);
  train->add_option("--heads", ta.heads);
  train->add_option("--lr", ta.lr);
  train->add_option("--dropout", ta.dropout);

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Evaluate every seed and write the results CSV");
  evalc->add_option("--endpoint", ea.endpoints, "Endpoint(s)")->required();
  evalc->add_option("--data", ea.data, "Preprocessed dataset")->required();
  evalc->add_option("--models", ea.models, "Checkpoints or directories")->required();
  evalc->add_option("--csv", ea.csv, "Output CSV")->required();
  evalc->add_option("--seeds", ea.seeds, "Expected seeds (default 1 2 3 4 5)");

  ExplainArgs xa;
  auto* explain = app.add_subcommand("explain", "CLS-attention overlays per cohort");
  explain->add_option("--model", xa.model, "Checkpoint")->required();
  explain->add_option("--data", xa.data, "Preprocessed dataset")->required();
  explain->add_option("--stratify", xa.stratify, "gold or none");
  explain->add_option("--ref-eq", xa.ref_eq, "Reference equation JSON");
  explain->add_option("--out-dir", xa.out_dir, "Output directory")->required();
  explain->add_option("--subset", xa.subset, "test or all");
  explain->add_option("--aggregation", xa.aggregation,
                      "mean_then_softmax or softmax_then_mean");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);  // --help / --version
  } catch (const CLI::ParseError& e) {
    write_error(err, "usage", kExitUsage, e.what());
    return kExitUsage;
  }

  try {
    if (synth->parsed()) cmd_synth(sa, ctx);
    if (prep->parsed()) cmd_preprocess(pa, ctx);
    if (train->parsed()) cmd_train(ta, ctx);
    if (evalc->parsed()) cmd_eval(ea, ctx);
    if (explain->parsed()) cmd_explain(xa, ctx);
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    write_error(err, std::string(to_string(e.kind())), code, e.what());
    return code;
  } catch (const fs::filesystem_error& e) {
    write_error(err, "io", kExitOther, e.what());
    return kExitOther;
  } catch (const std::exception& e) {
    write_error(err, "internal", kExitOther, e.what());
    return kExitOther;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace spiro::cli
