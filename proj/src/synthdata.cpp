#include "spiro/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "spiro/errors.hpp"
#include "spiro/rng.hpp"

namespace spiro::synth {

using nlohmann::json;

namespace {

struct DecayShape {
  double weight_fast;  // w
  double rate_slow;    // a
  double rate_fast;    // b
  double rise_volume;  // V at end of rise
};

DecayShape decay_shape(const BlowParams& p) {
  DecayShape s{};
  s.weight_fast = kMaxFastWeight * p.scoop;
  s.rise_volume = p.pef_lps * (p.rise_time_s / 2.0 + kPeakHoldS);
  const double remaining = p.fvc_liters - s.rise_volume;
  const double w = s.weight_fast;
  s.rate_slow = p.pef_lps * ((1.0 - w) + 2.0 * w / kFastRateMultiple) / remaining;
  s.rate_fast = kFastRateMultiple * s.rate_slow;
  return s;
}

double unscaled_volume(const BlowParams& p, const DecayShape& s, double t) {
  const double tr = p.rise_time_s;
  if (t <= tr) {
    return p.pef_lps * (t / 2.0 - tr / (2.0 * std::numbers::pi) *
                                      std::sin(std::numbers::pi * t / tr));
  }
  if (t <= tr + kPeakHoldS) return p.pef_lps * (tr / 2.0 + (t - tr));
  const double tau = t - tr - kPeakHoldS;
  const double w = s.weight_fast;
  const double left = p.pef_lps * ((1.0 - w) / s.rate_slow * std::exp(-s.rate_slow * tau) +
                                   w * std::exp(-s.rate_fast * tau) * (2.0 / s.rate_fast + tau));
  return p.fvc_liters - left;
}

std::size_t sample_count(const BlowParams& p) {
  return static_cast<std::size_t>(std::llround(p.duration_s / kBlowDt)) + 1;
}

double truncated_normal(Rng& rng, double sd) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const double z = normal(rng);
    if (std::abs(z) <= kNoiseClip) return z * sd;
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void validate(const BlowParams& p) {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorKind::parameter, "invalid BlowParams: " + what);
  };
  check(std::isfinite(p.fvc_liters) && p.fvc_liters >= 0.5 && p.fvc_liters <= 8.0,
        "fvc_liters must lie in [0.5, 8.0]");
  check(std::isfinite(p.pef_lps) && p.pef_lps >= 1.0 && p.pef_lps <= 16.0,
        "pef_lps must lie in [1.0, 16.0]");
  check(p.scoop >= 0.0 && p.scoop <= 1.0, "scoop must lie in [0, 1]");
  check(p.rise_time_s > 0.0, "rise_time_s must be positive");
  check(p.duration_s > 0.0 && p.duration_s <= 120.0, "duration_s must lie in (0, 120]");
  check(p.rise_time_s < p.duration_s, "rise_time_s must be shorter than duration_s");
  check(p.noise_sd >= 0.0 && std::isfinite(p.noise_sd), "noise_sd must be non-negative");
  check(p.pef_lps * (p.rise_time_s / 2.0 + kPeakHoldS) < p.fvc_liters,
        "volume exhaled before the decay (pef*(rise/2 + hold)) must stay below fvc");
}

double analytic_flow(const BlowParams& p, double t) {
  const DecayShape s = decay_shape(p);
  if (t < 0.0) return 0.0;
  if (t <= p.rise_time_s) {
    const double x = std::sin(std::numbers::pi * t / (2.0 * p.rise_time_s));
    return p.pef_lps * x * x;
  }
  if (t <= p.rise_time_s + kPeakHoldS) return p.pef_lps;
  const double tau = t - p.rise_time_s - kPeakHoldS;
  const double w = s.weight_fast;
  return p.pef_lps * ((1.0 - w) * std::exp(-s.rate_slow * tau) +
                      w * (1.0 + s.rate_fast * tau) * std::exp(-s.rate_fast * tau));
}

double suggested_duration(const BlowParams& p, double fraction) {
  const DecayShape s = decay_shape(p);
  // The slow term dominates the tail; bound its share of what remains.
  const double w = s.weight_fast;
  const double slow_volume = p.pef_lps * (1.0 - w) / s.rate_slow;
  const double fast_volume = p.pef_lps * w * 2.0 / s.rate_fast;
  const double target = fraction * p.fvc_liters;
  double tau = 0.0;
  if (slow_volume + fast_volume > target) {
    tau = std::log((slow_volume + fast_volume) / target) / s.rate_slow;
  }
  return p.rise_time_s + kPeakHoldS + tau;
}

std::vector<double> exact_volume_curve(const BlowParams& p) {
  validate(p);
  const DecayShape s = decay_shape(p);
  const std::size_t n = sample_count(p);
  require(n >= 2, ErrorKind::parameter, "duration_s too short for two samples");
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) {
    v[k] = unscaled_volume(p, s, static_cast<double>(k) * kBlowDt);
  }
  const double scale = p.fvc_liters / v.back();
  for (double& x : v) x *= scale;
  v.back() = p.fvc_liters;
  return v;
}

VolumeTimeSeries synth_volume_curve(const BlowParams& p, std::uint64_t seed) {
  const std::vector<double> exact = exact_volume_curve(p);
  VolumeTimeSeries out;
  out.volume_ml.resize(exact.size());
  Rng rng(seed);
  for (std::size_t k = 0; k < exact.size(); ++k) {
    double v = exact[k];
    if (p.noise_sd > 0.0) v += truncated_normal(rng, p.noise_sd);
    out.volume_ml[k] = std::max<std::int64_t>(0, std::llround(v * 1000.0));
  }
  return out;
}

const EndpointRule& LabelSpec::rule(Endpoint e) const {
  switch (e) {
    case Endpoint::copd_risk: return copd_risk;
    case Endpoint::mortality: return mortality;
    case Endpoint::exacerbation: return exacerbation;
  }
  return copd_risk;
}

double predicted_fvc(const Demographics& d) {
  const double h = d.height_cm / 100.0;
  return d.sex == 1 ? 5.76 * h - 0.026 * d.age - 4.34 : 4.43 * h - 0.026 * d.age - 2.89;
}

double predicted_pef(const Demographics& d) {
  const double h = d.height_cm / 100.0;
  return d.sex == 1 ? 6.14 * h - 0.043 * d.age + 0.15 : 5.50 * h - 0.030 * d.age - 1.11;
}

namespace {

struct Draw {
  Demographics demo;
  BlowParams params;
  double fvc_deficit = 0.0;
};

Draw draw_record(const LabelSpec& spec, Rng& rng) {
  Draw d;
  std::uniform_int_distribution<int> age_dist(40, 70);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution smoker(0.45);
  d.demo.age = age_dist(rng);
  d.demo.sex = coin(rng) ? 1 : 0;
  std::normal_distribution<double> height(d.demo.sex ? 176.0 : 163.0, d.demo.sex ? 7.0 : 6.5);
  d.demo.height_cm = std::clamp(static_cast<int>(std::lround(height(rng))), 145, 205);
  d.demo.smoking = smoker(rng) ? 1 : 0;

  double scoop;
  if (!spec.scoop_choices.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, spec.scoop_choices.size() - 1);
    scoop = spec.scoop_choices[pick(rng)];
  } else {
    std::gamma_distribution<double> ga(spec.scoop_beta_a, 1.0);
    std::gamma_distribution<double> gb(spec.scoop_beta_b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    scoop = x / (x + y) + spec.scoop_smoking_shift * d.demo.smoking +
            spec.scoop_age_shift * (d.demo.age - 55) / 10.0;
  }
  scoop = std::clamp(scoop, 0.0, 1.0);

  std::normal_distribution<double> unit(0.0, 1.0);
  const double fvc_pred = std::max(1.0, predicted_fvc(d.demo));
  const double pef_pred = std::max(2.0, predicted_pef(d.demo));
  BlowParams& p = d.params;
  p.scoop = scoop;
  p.fvc_liters = std::clamp(fvc_pred * (1.0 - spec.scoop_fvc_effect * scoop) * std::exp(spec.fvc_log_sd * unit(rng)),
                            0.8, 7.5);
  p.pef_lps = std::clamp(pef_pred * (1.0 - spec.scoop_pef_effect * scoop) * std::exp(spec.pef_log_sd * unit(rng)),
                         1.5, 15.0);
  std::uniform_real_distribution<double> rise(spec.rise_time_min_s, spec.rise_time_max_s);
  p.rise_time_s = rise(rng);
  // Keep the rise phase well inside the blow volume.
  p.rise_time_s = std::min(p.rise_time_s, 0.5 * p.fvc_liters / p.pef_lps);
  p.noise_sd = spec.noise_sd;
  p.duration_s = std::clamp(suggested_duration(p), 6.0, spec.max_duration_s);
  d.fvc_deficit = 1.0 - p.fvc_liters / fvc_pred;
  return d;
}

double log_odds(const LabelWeights& w, const Draw& d) {
  return w.scoop * d.params.scoop + w.fvc_deficit * d.fvc_deficit +
         w.age * (d.demo.age - 55) / 10.0 + w.smoking * d.demo.smoking + w.sex * d.demo.sex +
         w.height * (d.demo.height_cm - 170) / 10.0;
}

// Intercept c such that mean_i sigmoid(c + z_i) = target.
double solve_intercept(const std::vector<double>& z, double target) {
  auto mean_prob = [&](double c) {
    double s = 0.0;
    for (double zi : z) s += sigmoid(c + zi);
    return s / static_cast<double>(z.size());
  };
  double lo = -60.0;
  double hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mean_prob(mid) < target) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<CohortRecord> generate_cohort(std::size_t n, const LabelSpec& spec,
                                          std::uint64_t seed) {
  require(n >= 1, ErrorKind::config, "cohort size must be at least 1");
  for (Endpoint e : kAllEndpoints) {
    const EndpointRule& r = spec.rule(e);
    if (r.mode == LabelMode::probabilistic) {
      require(r.target_prevalence > 0.0 && r.target_prevalence < 1.0, ErrorKind::config,
              std::string("unsatisfiable prevalence for ") + std::string(to_string(e)) +
                  ": target must lie strictly inside (0, 1)");
    }
  }
  require(spec.invalid_fraction >= 0.0 && spec.invalid_fraction <= 1.0, ErrorKind::config,
          "invalid_fraction must lie in [0, 1]");
  require(spec.rise_time_min_s > 0.0 && spec.rise_time_min_s <= spec.rise_time_max_s,
          ErrorKind::config, "rise time range is empty");

  std::vector<Draw> draws(n);
  std::vector<CohortRecord> cohort(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 1, i));
    draws[i] = draw_record(spec, rng);
    CohortRecord& r = cohort[i];
    char id[32];
    std::snprintf(id, sizeof id, "rec%06zu", i);
    r.id = id;
    r.demographics = draws[i].demo;
    r.blow_params = draws[i].params;
    r.blow = synth_volume_curve(r.blow_params, derive_seed(seed, 2, i));
    std::bernoulli_distribution invalid(spec.invalid_fraction);
    std::bernoulli_distribution code32(0.1);
    if (invalid(rng)) {
      r.blow.acceptability_code = 7;
    } else {
      r.blow.acceptability_code = code32(rng) ? 32 : 0;
    }
  }

  std::uint64_t stream = 10;
  for (Endpoint e : kAllEndpoints) {
    const EndpointRule& rule = spec.rule(e);
    ++stream;
    if (rule.mode == LabelMode::deterministic) {
      for (std::size_t i = 0; i < n; ++i) {
        cohort[i].labels.set(e, draws[i].params.scoop > rule.threshold ? 1 : 0);
      }
      continue;
    }
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = log_odds(rule.weights, draws[i]);
    const double c = solve_intercept(z, rule.target_prevalence);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, stream, i));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      cohort[i].labels.set(e, u(rng) < sigmoid(c + z[i]) ? 1 : 0);
    }
  }
  return cohort;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

LabelMode mode_from_string(const std::string& s) {
  if (s == "deterministic") return LabelMode::deterministic;
  if (s == "probabilistic") return LabelMode::probabilistic;
  fail(ErrorKind::config, "unknown label mode '" + s + "'");
}

void read_rule(const json& j, EndpointRule& r) {
  if (j.contains("mode")) r.mode = mode_from_string(j.at("mode").get<std::string>());
  r.threshold = j.value("threshold", r.threshold);
  r.target_prevalence = j.value("target_prevalence", r.target_prevalence);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    r.weights.scoop = w.value("scoop", r.weights.scoop);
    r.weights.fvc_deficit = w.value("fvc_deficit", r.weights.fvc_deficit);
    r.weights.age = w.value("age", r.weights.age);
    r.weights.smoking = w.value("smoking", r.weights.smoking);
    r.weights.sex = w.value("sex", r.weights.sex);
    r.weights.height = w.value("height", r.weights.height);
  }
}

json write_rule(const EndpointRule& r) {
  return json{{"mode", r.mode == LabelMode::deterministic ? "deterministic" : "probabilistic"},
              {"threshold", r.threshold},
              {"target_prevalence", r.target_prevalence},
              {"weights",
               {{"scoop", r.weights.scoop},
                {"fvc_deficit", r.weights.fvc_deficit},
                {"age", r.weights.age},
                {"smoking", r.weights.smoking},
                {"sex", r.weights.sex},
                {"height", r.weights.height}}}};
}

}  // namespace

LabelSpec label_spec_from_json(const std::string& json_text) {
  LabelSpec spec;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("label spec is not valid JSON: ") + e.what());
  }
  try {
    for (Endpoint e : kAllEndpoints) {
      const std::string key(to_string(e));
      if (!j.contains(key)) continue;
      EndpointRule& r = e == Endpoint::copd_risk   ? spec.copd_risk
                        : e == Endpoint::mortality ? spec.mortality
                                                   : spec.exacerbation;
      read_rule(j.at(key), r);
    }
    if (j.contains("population")) {
      const json& p = j.at("population");
      if (p.contains("scoop_choices"))
        spec.scoop_choices = p.at("scoop_choices").get<std::vector<double>>();
      spec.scoop_beta_a = p.value("scoop_beta_a", spec.scoop_beta_a);
      spec.scoop_beta_b = p.value("scoop_beta_b", spec.scoop_beta_b);
      spec.scoop_smoking_shift = p.value("scoop_smoking_shift", spec.scoop_smoking_shift);
      spec.scoop_age_shift = p.value("scoop_age_shift", spec.scoop_age_shift);
      spec.scoop_fvc_effect = p.value("scoop_fvc_effect", spec.scoop_fvc_effect);
      spec.scoop_pef_effect = p.value("scoop_pef_effect", spec.scoop_pef_effect);
      spec.fvc_log_sd = p.value("fvc_log_sd", spec.fvc_log_sd);
      spec.pef_log_sd = p.value("pef_log_sd", spec.pef_log_sd);
      spec.rise_time_min_s = p.value("rise_time_min_s", spec.rise_time_min_s);
      spec.rise_time_max_s = p.value("rise_time_max_s", spec.rise_time_max_s);
      spec.noise_sd = p.value("noise_sd", spec.noise_sd);
      spec.max_duration_s = p.value("max_duration_s", spec.max_duration_s);
      spec.invalid_fraction = p.value("invalid_fraction", spec.invalid_fraction);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("label spec has a field of the wrong type: ") + e.what());
  }
  return spec;
}

std::string label_spec_to_json(const LabelSpec& spec) {
  json j;
  for (Endpoint e : kAllEndpoints) j[std::string(to_string(e))] = write_rule(spec.rule(e));
  j["population"] = {{"scoop_choices", spec.scoop_choices},
                     {"scoop_beta_a", spec.scoop_beta_a},
                     {"scoop_beta_b", spec.scoop_beta_b},
                     {"scoop_smoking_shift", spec.scoop_smoking_shift},
                     {"scoop_age_shift", spec.scoop_age_shift},
                     {"scoop_fvc_effect", spec.scoop_fvc_effect},
                     {"scoop_pef_effect", spec.scoop_pef_effect},
                     {"fvc_log_sd", spec.fvc_log_sd},
                     {"pef_log_sd", spec.pef_log_sd},
                     {"rise_time_min_s", spec.rise_time_min_s},
                     {"rise_time_max_s", spec.rise_time_max_s},
                     {"noise_sd", spec.noise_sd},
                     {"max_duration_s", spec.max_duration_s},
                     {"invalid_fraction", spec.invalid_fraction}};
  return j.dump(2);
}

std::string to_ndjson_line(const CohortRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["volume_ml"] = r.blow.volume_ml;
  j["age"] = r.demographics.age;
  j["sex"] = r.demographics.sex;
  j["smoking"] = r.demographics.smoking;
  j["height_cm"] = r.demographics.height_cm;
  j["copd_risk"] = r.labels.copd_risk;
  j["mortality"] = r.labels.mortality;
  j["exacerbation"] = r.labels.exacerbation;
  const BlowParams& p = r.blow_params;
  j["blow_params"] = {{"fvc_liters", p.fvc_liters}, {"pef_lps", p.pef_lps},
                      {"scoop", p.scoop},           {"rise_time_s", p.rise_time_s},
                      {"noise_sd", p.noise_sd},     {"duration_s", p.duration_s}};
  // Only non-default codes are written, keeping the common record shape fixed.
  if (r.blow.acceptability_code != 0) j["acceptability_code"] = r.blow.acceptability_code;
  return j.dump();
}

CohortRecord from_ndjson_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorKind::data, std::string("cohort line is not valid JSON: ") + e.what());
  }
  CohortRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.blow.volume_ml = j.at("volume_ml").get<std::vector<std::int64_t>>();
    r.blow.acceptability_code = j.value("acceptability_code", 0);
    r.demographics.age = j.at("age").get<int>();
    r.demographics.sex = j.at("sex").get<int>();
    r.demographics.smoking = j.at("smoking").get<int>();
    r.demographics.height_cm = j.at("height_cm").get<int>();
    r.labels.copd_risk = j.at("copd_risk").get<int>();
    r.labels.mortality = j.at("mortality").get<int>();
    r.labels.exacerbation = j.at("exacerbation").get<int>();
    if (j.contains("blow_params")) {
      const json& p = j.at("blow_params");
      r.blow_params.fvc_liters = p.at("fvc_liters").get<double>();
      r.blow_params.pef_lps = p.at("pef_lps").get<double>();
      r.blow_params.scoop = p.at("scoop").get<double>();
      r.blow_params.rise_time_s = p.at("rise_time_s").get<double>();
      r.blow_params.noise_sd = p.at("noise_sd").get<double>();
      r.blow_params.duration_s = p.at("duration_s").get<double>();
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::data, std::string("cohort record is missing a field or has the wrong type: ") +
                              e.what());
  }
  for (auto v : r.blow.volume_ml) {
    require(v >= 0, ErrorKind::data, "record " + r.id + " has a negative volume sample");
  }
  for (Endpoint e : kAllEndpoints) {
    const int y = r.labels.get(e);
    require(y == 0 || y == 1, ErrorKind::data, "record " + r.id + " has a non-binary label");
  }
  return r;
}

void write_cohort(std::ostream& out, const std::vector<CohortRecord>& cohort) {
  for (const CohortRecord& r : cohort) out << to_ndjson_line(r) << '\n';
}

std::vector<CohortRecord> read_cohort(std::istream& in) {
  std::vector<CohortRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_ndjson_line(line));
    } catch (const Error& e) {
      fail(e.kind(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::unordered_set<std::string> ids;
  for (const CohortRecord& r : out) {
    require(ids.insert(r.id).second, ErrorKind::data, "duplicate record id '" + r.id + "'");
  }
  return out;
}

}  // namespace spiro::synth
