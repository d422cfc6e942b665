#include "spiro/types.hpp"

#include "spiro/errors.hpp"

namespace spiro {

void validate(const Demographics& d) {
  require(d.age >= 18 && d.age <= 100, ErrorKind::parameter,
          "age " + std::to_string(d.age) + " outside [18,100]");
  require(d.height_cm >= 120 && d.height_cm <= 220, ErrorKind::parameter,
          "height " + std::to_string(d.height_cm) + " cm outside [120,220]");
  require(d.sex == 0 || d.sex == 1, ErrorKind::parameter, "sex must be 0 or 1");
  require(d.smoking == 0 || d.smoking == 1, ErrorKind::parameter,
          "smoking must be 0 or 1");
}

std::string_view to_string(Endpoint e) {
  switch (e) {
    case Endpoint::copd_risk: return "copd_risk";
    case Endpoint::mortality: return "mortality";
    case Endpoint::exacerbation: return "exacerbation";
  }
  return "unknown";
}

Endpoint endpoint_from_string(std::string_view name) {
  for (Endpoint e : kAllEndpoints) {
    if (to_string(e) == name) return e;
  }
  fail(ErrorKind::config, "unknown endpoint '" + std::string(name) + "'");
}

int EndpointLabels::get(Endpoint e) const {
  switch (e) {
    case Endpoint::copd_risk: return copd_risk;
    case Endpoint::mortality: return mortality;
    case Endpoint::exacerbation: return exacerbation;
  }
  return 0;
}

void EndpointLabels::set(Endpoint e, int value) {
  switch (e) {
    case Endpoint::copd_risk: copd_risk = value; break;
    case Endpoint::mortality: mortality = value; break;
    case Endpoint::exacerbation: exacerbation = value; break;
  }
}

}  // namespace spiro
