#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "spiro/cli.hpp"
#include "spiro/io.hpp"

using namespace spiro;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("spiro_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

nlohmann::json error_json(const Outcome& o) { return nlohmann::json::parse(o.err); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth is deterministic") {
  TempDir d("cli_synth");
  const Outcome a = run({"synth", "--n", "50", "--seed", "9", "--out", d / "a.ndjson"});
  const Outcome b = run({"synth", "--n", "50", "--seed", "9", "--out", d / "b.ndjson"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(io::read_file(d / "a.ndjson") == io::read_file(d / "b.ndjson"));
  const auto manifest = nlohmann::json::parse(io::read_file(d / "a.ndjson.run.json"));
  CHECK(manifest.at("command") == "synth");
  CHECK(manifest.at("seeds") == nlohmann::json::array({9}));
  const Outcome c = run({"synth", "--n", "50", "--seed", "10", "--out", d / "c.ndjson"});
  CHECK(io::read_file(d / "c.ndjson") != io::read_file(d / "a.ndjson"));
}

TEST_CASE("usage errors exit 2") {
  const Outcome a = run({"synth", "--n", "5", "--out", "x.ndjson", "--bogus"});
  CHECK(a.code == cli::kExitUsage);
  CHECK(error_json(a).at("exit_code") == 2);
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"fly"}).code == cli::kExitUsage);
}

TEST_CASE("bad parameters exit 3 with a JSON error line") {
  TempDir d("cli_params");
  const Outcome a = run({"synth", "--n", "0", "--out", d / "x.ndjson"});
  CHECK(a.code == cli::kExitData);
  const auto j = error_json(a);
  CHECK(j.at("error") == "parameter");
  CHECK(j.at("exit_code") == 3);
  CHECK(a.err.find('\n') == a.err.size() - 1);
  const Outcome b = run({"preprocess", "--in", d / "missing.ndjson", "--out", d / "x.spfd"});
  CHECK(b.code != 0);
  CHECK(error_json(b).at("message").get<std::string>().find("missing.ndjson") != std::string::npos);
}

TEST_CASE("small end-to-end run") {
  TempDir d("cli_e2e");
  io::atomic_write(d / "train.json",
                   R"({"model": {"d_embed": 8, "layers": 1, "epochs": 2},
                       "mlp": {"epochs": 3}, "gbdt": {"rounds": 5, "max_depth": 2}})");
  REQUIRE(run({"synth", "--n", "250", "--seed", "4", "--out", d / "c.ndjson"}).code == 0);
  REQUIRE(run({"preprocess", "--in", d / "c.ndjson", "--out", d / "c.spfd"}).code == 0);
  const auto prep = nlohmann::json::parse(io::read_file(d / "c.spfd.run.json"));
  CHECK(prep.at("report").at("kept").get<int>() > 200);

  const Outcome t = run({"train", "--endpoint", "copd_risk", "--data", d / "c.spfd", "--config",
                         d / "train.json", "--out", d / "models", "--seeds", "1", "2"});
  REQUIRE(t.code == 0);
  CHECK(fs::exists(d / "models/copd_risk_seed1.spfm"));
  CHECK(fs::exists(d / "models/copd_risk_seed2.spfm"));
  const auto tm = nlohmann::json::parse(io::read_file(d / "models/run_manifest.json"));
  CHECK(tm.at("config").at("model").at("d_embed") == 8);
  CHECK(tm.at("input_fnv1a64").size() == 2);

  const Outcome e = run({"eval", "--endpoint", "copd_risk", "--data", d / "c.spfd", "--models",
                         d / "models", "--csv", d / "r.csv", "--seeds", "1", "2"});
  REQUIRE(e.code == 0);
  const std::string csv = io::read_file(d / "r.csv");
  CHECK(csv == e.out);
  CHECK(csv.rfind("endpoint,method,metric,mean,sd\n", 0) == 0);
  for (const char* m : {"fev1_fvc_ratio", "mlp_summary_stats", "mlp_demographic", "transformer",
                        "transformer_fused"}) {
    CHECK(csv.find(std::string("copd_risk,") + m + ",roc_auc,") != std::string::npos);
  }

  // A seed with no checkpoint is named.
  const Outcome missing = run({"eval", "--endpoint", "copd_risk", "--data", d / "c.spfd",
                               "--models", d / "models", "--csv", d / "m.csv", "--seeds", "1",
                               "2", "3"});
  CHECK(missing.code == cli::kExitData);
  CHECK(error_json(missing).at("message").get<std::string>().find("seed(s) 3") !=
        std::string::npos);

  const Outcome x = run({"explain", "--model", d / "models/copd_risk_seed1.spfm", "--data",
                         d / "c.spfd", "--stratify", "none", "--out-dir", d / "explain"});
  REQUIRE(x.code == 0);
  CHECK(fs::exists(d / "explain/copd_risk_all.csv"));
  CHECK(fs::exists(d / "explain/copd_risk_all.svg"));
  const auto summary = nlohmann::json::parse(io::read_file(d / "explain/explain_summary.json"));
  CHECK(summary.contains("all"));
  const Outcome g = run({"explain", "--model", d / "models/copd_risk_seed1.spfm", "--data",
                         d / "c.spfd", "--stratify", "gold", "--out-dir", d / "explain2"});
  CHECK(g.code == cli::kExitUsage);
}

TEST_CASE("corrupt checkpoint exits 3") {
  TempDir d("cli_corrupt");
  io::atomic_write(d / "bad.spfm", "SPFMnot really a checkpoint");
  REQUIRE(run({"synth", "--n", "30", "--seed", "1", "--out", d / "c.ndjson"}).code == 0);
  REQUIRE(run({"preprocess", "--in", d / "c.ndjson", "--out", d / "c.spfd"}).code == 0);
  const Outcome o = run({"eval", "--endpoint", "copd_risk", "--data", d / "c.spfd", "--models",
                         d / "bad.spfm", "--csv", d / "r.csv", "--seeds", "1"});
  CHECK(o.code == cli::kExitData);
  CHECK(error_json(o).at("error") == "integrity");
}

}  // TEST_SUITE
