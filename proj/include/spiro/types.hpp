#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace spiro {

/// Sampling interval of a raw blow, fixed at 10 ms.
inline constexpr double kBlowDt = 0.010;

/// One forced exhalation: cumulative volume in millilitres every 10 ms.
struct VolumeTimeSeries {
  std::vector<std::int64_t> volume_ml;
  int acceptability_code = 0;
  double dt_s = kBlowDt;
};

/// sex: 1 = male, 0 = female. smoking: 1 = ever smoker.
struct Demographics {
  int age = 0;
  int sex = 0;
  int smoking = 0;
  int height_cm = 0;
};

void validate(const Demographics& d);

enum class Endpoint { copd_risk, mortality, exacerbation };

inline constexpr std::array<Endpoint, 3> kAllEndpoints = {
    Endpoint::copd_risk, Endpoint::mortality, Endpoint::exacerbation};

std::string_view to_string(Endpoint e);
Endpoint endpoint_from_string(std::string_view name);

struct EndpointLabels {
  int copd_risk = 0;
  int mortality = 0;
  int exacerbation = 0;

  int get(Endpoint e) const;
  void set(Endpoint e, int value);
  bool operator==(const EndpointLabels&) const = default;
};

struct SpiroSummary {
  double fev1_l = 0.0;
  double fvc_l = 0.0;
  double pef_lps = 0.0;
  double fef25_lps = 0.0;
  double fef50_lps = 0.0;
  double fef75_lps = 0.0;
  double ratio = 0.0;
};

}  // namespace spiro
