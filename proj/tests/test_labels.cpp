#include <doctest.h>

#include <sstream>

#include "label_golden.hpp"
#include "spiro/errors.hpp"
#include "spiro/labels.hpp"

using namespace spiro;
using namespace spiro::labels;

namespace {

const std::string kTest = "2010-06-15";

EndpointLabels labels_for(std::vector<MedicalRecord> records, const LabelRuleset& rules = {}) {
  return map_records(records, kTest, rules).labels;
}

}  // namespace

TEST_SUITE("labels") {

TEST_CASE("hospital J449 after the test as primary cause") {
  const auto l = labels_for({{Source::hospital_icd10, "J449", "2011-01-01", true}});
  CHECK(l == EndpointLabels{1, 0, 1});
}

TEST_CASE("death record J41 counts for mortality only") {
  const auto l = labels_for({{Source::death_icd10, "J41", "2015-01-01", false}});
  CHECK(l == EndpointLabels{0, 1, 0});
}

TEST_CASE("no records means all labels zero") { CHECK(labels_for({}) == EndpointLabels{0, 0, 0}); }

TEST_CASE("COPD code dated before the test does not count for risk") {
  const auto l = labels_for({{Source::hospital_icd10, "J449", "2009-01-01", true}});
  CHECK(l.copd_risk == 0);
  CHECK(l.exacerbation == 0);
}

TEST_CASE("golden scenarios") {
  const auto scenarios =
      testing::load_label_scenarios(std::string(SPIRO_TEST_DATA_DIR) + "/label_scenarios.json");
  REQUIRE(scenarios.size() == 25);
  for (const auto& s : scenarios) {
    CAPTURE(s.name);
    const LabelResult r = map_records(s.records, s.spiro_date);
    CHECK(r.labels == s.expected);
    CHECK(r.rejected.size() == s.rejected);
  }
}

TEST_CASE("golden scenarios cover every configured code") {
  const auto scenarios =
      testing::load_label_scenarios(std::string(SPIRO_TEST_DATA_DIR) + "/label_scenarios.json");
  const LabelRuleset rules;
  std::vector<std::string> wanted = rules.self_report_codes;
  for (const auto& c : rules.icd10_prefixes) wanted.push_back(c);
  for (const auto& c : rules.icd9_codes) wanted.push_back(c);
  for (const auto& c : rules.mortality_extra_icd10) wanted.push_back(c);
  for (const auto& code : wanted) {
    bool seen = false;
    for (const auto& s : scenarios) {
      for (const auto& r : s.records) seen = seen || normalize_code(r.code) == code;
    }
    CAPTURE(code);
    CHECK(seen);
  }
}

TEST_CASE("malformed records are reported, not silently skipped") {
  const auto r = map_records({{Source::hospital_icd10, "??", "2011-01-01", true},
                              {Source::self_report, "1112", "2011-13-01", false},
                              {Source::self_report, "1112", "2011-02-01", false}},
                             kTest);
  CHECK(r.labels == EndpointLabels{1, 0, 0});
  REQUIRE(r.rejected.size() == 2);
  CHECK(r.rejected[0].record_index == 0);
  CHECK(r.rejected[1].record_index == 1);
  CHECK(r.rejected[1].message.find("date") != std::string::npos);
}

TEST_CASE("invalid spirometry date is a data error") {
  try {
    map_records({}, "2010-02-31");
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}

TEST_CASE("adding a record never clears a label") {
  const std::vector<MedicalRecord> pool{
      {Source::self_report, "1112", "2012-01-01", false},
      {Source::hospital_icd10, "J449", "2012-01-01", true},
      {Source::hospital_icd10, "J449", "2001-01-01", true},
      {Source::hospital_icd9, "496", "2013-01-01", false},
      {Source::death_icd10, "J41", "2014-01-01", false},
      {Source::gp_icd10_mapped, "J43", "2012-01-01", false},
      {Source::hospital_icd10, "K35", "2012-01-01", true},
      {Source::hospital_icd10, "bad code", "2012-01-01", true},
  };
  // Every subset, and every subset plus one more record.
  for (unsigned mask = 0; mask < (1u << pool.size()); ++mask) {
    std::vector<MedicalRecord> base;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (mask & (1u << i)) base.push_back(pool[i]);
    }
    const auto before = labels_for(base);
    for (const auto& extra : pool) {
      auto more = base;
      more.push_back(extra);
      const auto after = labels_for(more);
      CHECK(after.copd_risk >= before.copd_risk);
      CHECK(after.mortality >= before.mortality);
      CHECK(after.exacerbation >= before.exacerbation);
    }
    if (before.exacerbation) CHECK(before.copd_risk == 1);
  }
}

TEST_CASE("swapping the ruleset changes outcomes without code changes") {
  LabelRuleset custom;
  custom.icd10_prefixes = {"J45"};
  custom.mortality_extra_icd10 = {};
  const std::vector<MedicalRecord> recs{{Source::hospital_icd10, "J459", "2012-01-01", true},
                                        {Source::death_icd10, "J41", "2013-01-01", false}};
  CHECK(labels_for(recs) == EndpointLabels{0, 1, 0});
  CHECK(labels_for(recs, custom) == EndpointLabels{1, 0, 1});
  const LabelRuleset back = ruleset_from_json(ruleset_to_json(custom));
  CHECK(back.icd10_prefixes == custom.icd10_prefixes);
  CHECK(back.mortality_extra_icd10.empty());
}

TEST_CASE("code normalization") {
  CHECK(normalize_code("j44.9") == "J449");
  CHECK(normalize_code(" J43 ") == "J43");
}

TEST_CASE("Read-code lookup maps primary care records") {
  std::istringstream csv("read_code,icd10\nH3y..,J44.9\nH32..,J43\n");
  const ReadCodeMap map = read_code_map_from_csv(csv);
  const auto rec = map_gp_record("H3y..", "2012-01-01", map);
  REQUIRE(rec.has_value());
  CHECK(rec->source == Source::gp_icd10_mapped);
  CHECK(rec->code == "J449");
  CHECK_FALSE(map_gp_record("XXXXX", "2012-01-01", map).has_value());
  CHECK(labels_for({*rec}) == EndpointLabels{1, 0, 0});
}

TEST_CASE("record JSON parsing") {
  const auto r = record_from_json(
      R"({"source":"hospital_icd9","code":"496","date":"2012-01-01","primary_cause":true})");
  CHECK(r.source == Source::hospital_icd9);
  CHECK(r.primary_cause);
  CHECK_THROWS_AS(record_from_json(R"({"source":"nowhere","code":"1","date":"2012-01-01"})"), Error);
  CHECK_THROWS_AS(record_from_json("{"), Error);
}

}  // TEST_SUITE
