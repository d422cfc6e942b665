#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spiro/types.hpp"

namespace spiro::synth {

/// Shape parameters of one simulated blow.
///
/// The flow-time profile rises as PEF * sin^2 over `rise_time_s`, holds PEF for
/// kPeakHoldS, then decays as a blend of a slow exponential and a fast
/// (1 + b*tau) e^{-b*tau} term.
/// `scoop` sets the weight of the fast term: at scoop = 0 the decay is a pure
/// exponential, which gives an exactly straight descending flow-volume limb;
/// larger scoop sags the limb below its chord.
struct BlowParams {
  double fvc_liters = 4.0;
  double pef_lps = 8.0;
  double scoop = 0.0;
  double rise_time_s = 0.08;
  double noise_sd = 0.0;
  double duration_s = 8.0;

  bool operator==(const BlowParams&) const = default;
};

void validate(const BlowParams& p);

/// Flow stays at PEF this long after the rise. Without it the peak is a kink
/// that sigma = 1 smoothing shaves by up to 5%.
inline constexpr double kPeakHoldS = 0.03;
/// Ratio between the fast and slow decay rates.
inline constexpr double kFastRateMultiple = 12.0;
/// Weight of the fast decay term at scoop = 1.
inline constexpr double kMaxFastWeight = 0.7;
/// Gaussian volume noise is truncated at this many standard deviations.
inline constexpr double kNoiseClip = 2.0;

/// Noiseless volume in litres at every 10 ms sample, scaled so the final
/// sample equals fvc_liters.
std::vector<double> exact_volume_curve(const BlowParams& p);

/// Continuous (unscaled) flow at time t for the noiseless shape.
double analytic_flow(const BlowParams& p, double t);

/// Time after which less than `fraction` of FVC remains to be exhaled.
double suggested_duration(const BlowParams& p, double fraction = 1e-4);

VolumeTimeSeries synth_volume_curve(const BlowParams& p, std::uint64_t seed);

struct CohortRecord {
  std::string id;
  VolumeTimeSeries blow;
  Demographics demographics;
  EndpointLabels labels;
  BlowParams blow_params;
};

enum class LabelMode { deterministic, probabilistic };

/// Weights of the label log-odds. Features are the scoop, the FVC deficit
/// relative to the sex/height/age prediction (1 - fvc/fvc_pred), age in
/// decades from 55, smoking, sex and height in decimetres from 170 cm.
struct LabelWeights {
  double scoop = 0.0;
  double fvc_deficit = 0.0;
  double age = 0.0;
  double smoking = 0.0;
  double sex = 0.0;
  double height = 0.0;
};

struct EndpointRule {
  LabelMode mode = LabelMode::probabilistic;
  double threshold = 0.5;          // deterministic: label = scoop > threshold
  double target_prevalence = 0.1;  // probabilistic: mean label probability
  LabelWeights weights;
};

struct LabelSpec {
  EndpointRule copd_risk{LabelMode::probabilistic, 0.5, 0.3, {6.0, 2.0, 0.3, 0.5, 0.0, 0.0}};
  EndpointRule mortality{LabelMode::probabilistic, 0.5, 0.05, {5.0, 3.0, 0.8, 0.5, 0.3, 0.0}};
  EndpointRule exacerbation{LabelMode::probabilistic, 0.5, 0.08, {6.0, 2.0, 0.3, 0.3, 0.0, 0.0}};

  // Population of shape parameters.
  std::vector<double> scoop_choices;  // non-empty: scoop drawn uniformly from these
  double scoop_beta_a = 1.3;
  double scoop_beta_b = 2.2;
  double scoop_smoking_shift = 0.08;
  double scoop_age_shift = 0.03;  // per decade from 55
  double scoop_fvc_effect = 0.2;  // FVC scaled by (1 - effect * scoop)
  double scoop_pef_effect = 0.4;  // PEF scaled by (1 - effect * scoop)
  double fvc_log_sd = 0.12;
  double pef_log_sd = 0.15;
  double rise_time_min_s = 0.04;
  double rise_time_max_s = 0.12;
  double noise_sd = 0.003;
  double max_duration_s = 20.0;
  double invalid_fraction = 0.0;  // share of blows given a rejected acceptability code

  const EndpointRule& rule(Endpoint e) const;
};

LabelSpec label_spec_from_json(const std::string& json_text);
std::string label_spec_to_json(const LabelSpec& spec);

/// Reference-style predictions used by the simulator (litres, L/s).
double predicted_fvc(const Demographics& d);
double predicted_pef(const Demographics& d);

std::vector<CohortRecord> generate_cohort(std::size_t n, const LabelSpec& spec,
                                          std::uint64_t seed);

/// NDJSON cohort serialization.
std::string to_ndjson_line(const CohortRecord& r);
CohortRecord from_ndjson_line(const std::string& line);
void write_cohort(std::ostream& out, const std::vector<CohortRecord>& cohort);
std::vector<CohortRecord> read_cohort(std::istream& in);

}  // namespace spiro::synth
