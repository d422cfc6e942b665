#include "spiro/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "spiro/errors.hpp"
#include "spiro/io.hpp"
#include "spiro/rng.hpp"

namespace spiro::data {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x5350'4c49'54ull;  // "SPLIT"

void check_fractions(const SplitFractions& f) {
  double sum = 0.0;
  for (double x : f) {
    require(x >= 0.0 && x <= 1.0, ErrorKind::config, "split fractions must lie in [0,1]");
    sum += x;
  }
  require(std::abs(sum - 1.0) < 1e-9, ErrorKind::config,
          "split fractions must sum to 1, got " + std::to_string(sum));
}

}  // namespace

Split split_indices(std::size_t n, std::uint64_t seed, const SplitFractions& fractions) {
  check_fractions(fractions);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Fisher-Yates with our own draws so the order does not depend on the
  // standard library's shuffle implementation.
  Rng rng(derive_seed(seed, kSplitStream));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  const auto n_train = static_cast<std::size_t>(fractions[0] * static_cast<double>(n) + 1e-9);
  const auto n_val = static_cast<std::size_t>(fractions[1] * static_cast<double>(n) + 1e-9);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

preproc::Standardizer fit_on(const Dataset& ds, const std::vector<std::size_t>& indices) {
  std::vector<preproc::FlowVolumeCurve> curves;
  curves.reserve(indices.size());
  for (std::size_t i : indices) curves.push_back(ds.samples.at(i).curve);
  return preproc::fit_standardizer(curves);
}

Dataset preprocess_cohort(const std::vector<synth::CohortRecord>& cohort,
                          const PreprocessOptions& opts, PreprocessReport* report) {
  require(opts.dv_l > 0.0, ErrorKind::config, "dv must be positive");
  require(opts.t_max >= 2, ErrorKind::config, "tmax must be at least 2");
  PreprocessReport local;
  PreprocessReport& rep = report ? *report : local;
  rep = {};
  rep.input = cohort.size();

  Dataset ds;
  ds.t_max = opts.t_max;
  ds.patch_len = opts.patch_len;
  ds.length = preproc::padded_length(opts.t_max, opts.patch_len);
  ds.dv_l = opts.dv_l;
  ds.split_seed = opts.split_seed;
  ds.split = opts.split;
  check_fractions(opts.split);

  std::vector<std::size_t> candidates;
  std::vector<SpiroSummary> summaries;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& r = cohort[i];
    if (!preproc::validate_blow(r.blow.acceptability_code)) {
      ++rep.invalid_code;
      rep.messages.push_back(r.id + ": acceptability code " +
                             std::to_string(r.blow.acceptability_code));
      continue;
    }
    try {
      summaries.push_back(preproc::compute_summary(r.blow));
      candidates.push_back(i);
    } catch (const Error& e) {
      ++rep.degenerate;
      rep.messages.push_back(r.id + ": " + e.what());
    }
  }
  require(!candidates.empty(), ErrorKind::data, "no valid blows in cohort");

  const std::vector<std::size_t> kept = preproc::qc_filter(summaries);
  std::vector<bool> keep(candidates.size(), false);
  for (std::size_t k : kept) keep[k] = true;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto& r = cohort[candidates[c]];
    if (!keep[c]) {
      ++rep.qc_dropped;
      rep.messages.push_back(r.id + ": outside the QC percentile band");
      continue;
    }
    preproc::FlowVolumeCurve curve;
    try {
      curve = preproc::flow_volume_from_blow(r.blow, opts.dv_l, opts.t_max, opts.sigma);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::data) throw;
      ++rep.too_long;
      rep.messages.push_back(r.id + ": " + e.what());
      continue;
    }
    curve.flow_lps.resize(ds.length, 0.0);
    for (double& v : curve.flow_lps) v = static_cast<double>(static_cast<float>(v));
    ds.samples.push_back({r.id, std::move(curve), r.demographics, r.labels, summaries[c]});
  }
  rep.kept = ds.samples.size();
  require(!ds.samples.empty(), ErrorKind::data, "every record was dropped during preprocessing");

  const Split s = split_indices(ds.samples.size(), ds.split_seed, ds.split);
  require(!s.train.empty(), ErrorKind::config, "training split is empty");
  ds.standardizer = fit_on(ds, s.train);
  return ds;
}

namespace {

json summary_json(const SpiroSummary& s) {
  return {{"fev1_l", s.fev1_l},   {"fvc_l", s.fvc_l},         {"pef_lps", s.pef_lps},
          {"fef25_lps", s.fef25_lps}, {"fef50_lps", s.fef50_lps}, {"fef75_lps", s.fef75_lps},
          {"ratio", s.ratio}};
}

SpiroSummary summary_from(const json& j) {
  SpiroSummary s;
  s.fev1_l = j.at("fev1_l");
  s.fvc_l = j.at("fvc_l");
  s.pef_lps = j.at("pef_lps");
  s.fef25_lps = j.at("fef25_lps");
  s.fef50_lps = j.at("fef50_lps");
  s.fef75_lps = j.at("fef75_lps");
  s.ratio = j.at("ratio");
  return s;
}

}  // namespace

std::string serialize_dataset(const Dataset& ds) {
  std::string curves;
  curves.reserve(ds.samples.size() * ds.length * 4);
  json meta = json::array();
  for (const Sample& s : ds.samples) {
    require(s.curve.length() == ds.length, ErrorKind::shape,
            s.id + ": curve length " + std::to_string(s.curve.length()) + " != T " +
                std::to_string(ds.length));
    for (double v : s.curve.flow_lps) io::put_f32(curves, static_cast<float>(v));
    meta.push_back({{"id", s.id},
                    {"valid_len", s.curve.valid_len},
                    {"age", s.demographics.age},
                    {"sex", s.demographics.sex},
                    {"smoking", s.demographics.smoking},
                    {"height_cm", s.demographics.height_cm},
                    {"copd_risk", s.labels.copd_risk},
                    {"mortality", s.labels.mortality},
                    {"exacerbation", s.labels.exacerbation},
                    {"summary", summary_json(s.summary)}});
  }
  const std::string meta_text = meta.dump();
  const std::string body = curves + meta_text;
  const json manifest{{"format", "SPFD"},
                      {"schema_version", kDatasetVersion},
                      {"T", ds.length},
                      {"t_max", ds.t_max},
                      {"P", ds.patch_len},
                      {"dv_l", ds.dv_l},
                      {"n_records", ds.samples.size()},
                      {"split_seed", ds.split_seed},
                      {"split", ds.split},
                      {"standardizer", {{"mean", ds.standardizer.mean}, {"sd", ds.standardizer.sd}}},
                      {"curve_bytes", curves.size()},
                      {"metadata_bytes", meta_text.size()},
                      {"body_fnv1a64", io::hex64(io::fnv1a64(body))}};
  const std::string mtext = manifest.dump();
  std::string out = "SPFD";
  io::put_u32(out, kDatasetVersion);
  io::put_u64(out, mtext.size());
  out += mtext;
  out += body;
  return out;
}

Dataset deserialize_dataset(std::string_view bytes) {
  require(bytes.size() >= 16 && bytes.substr(0, 4) == "SPFD", ErrorKind::integrity,
          "not a dataset file (bad magic at offset 0)");
  const std::uint32_t version = io::get_u32(bytes, 4);
  require(version == kDatasetVersion, ErrorKind::integrity,
          "unsupported dataset version " + std::to_string(version));
  const std::uint64_t mlen = io::get_u64(bytes, 8);
  require(mlen <= bytes.size() - 16, ErrorKind::integrity,
          "dataset truncated inside manifest at offset " + std::to_string(bytes.size()));
  Dataset ds;
  try {
    const json m = json::parse(bytes.substr(16, mlen));
    const std::size_t body_start = 16 + mlen;
    const std::string_view body = bytes.substr(body_start);
    const std::size_t curve_bytes = m.at("curve_bytes");
    const std::size_t meta_bytes = m.at("metadata_bytes");
    require(body.size() == curve_bytes + meta_bytes, ErrorKind::integrity,
            "dataset body is " + std::to_string(body.size()) + " bytes from offset " +
                std::to_string(body_start) + ", expected " +
                std::to_string(curve_bytes + meta_bytes));
    require(io::hex64(io::fnv1a64(body)) == m.at("body_fnv1a64").get<std::string>(),
            ErrorKind::integrity, "dataset checksum mismatch");
    ds.length = m.at("T");
    ds.t_max = m.at("t_max");
    ds.patch_len = m.at("P");
    ds.dv_l = m.at("dv_l");
    ds.split_seed = m.at("split_seed");
    ds.split = m.at("split").get<SplitFractions>();
    ds.standardizer.mean = m.at("standardizer").at("mean").get<std::vector<double>>();
    ds.standardizer.sd = m.at("standardizer").at("sd").get<std::vector<double>>();
    const std::size_t n = m.at("n_records");
    require(curve_bytes == n * ds.length * 4, ErrorKind::integrity,
            "curve block size does not match n_records x T");
    const json meta = json::parse(body.substr(curve_bytes));
    require(meta.is_array() && meta.size() == n, ErrorKind::integrity,
            "metadata table does not have n_records entries");
    ds.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      Sample& s = ds.samples[i];
      const json& r = meta[i];
      s.id = r.at("id");
      s.curve.dv_l = ds.dv_l;
      s.curve.valid_len = r.at("valid_len");
      require(s.curve.valid_len <= ds.length, ErrorKind::integrity,
              s.id + ": valid_len exceeds T");
      s.curve.flow_lps.resize(ds.length);
      for (std::size_t t = 0; t < ds.length; ++t) {
        s.curve.flow_lps[t] = io::get_f32(body, (i * ds.length + t) * 4);
      }
      s.demographics = {r.at("age"), r.at("sex"), r.at("smoking"), r.at("height_cm")};
      s.labels = {r.at("copd_risk"), r.at("mortality"), r.at("exacerbation")};
      s.summary = summary_from(r.at("summary"));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, std::string("dataset manifest is malformed: ") + e.what());
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  io::atomic_write(path, serialize_dataset(ds));
}

Dataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

}  // namespace spiro::data
