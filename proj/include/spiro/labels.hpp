#pragma once

#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spiro/types.hpp"

namespace spiro::labels {

// Correspondence with the biobank fields the rules were written for:
//   self_report      <- 20002 (non-cancer illness codes)
//   hospital_icd10   <- 41270, hospital_icd9 <- 41271
//   gp_icd10_mapped  <- 42040 after Read v2/v3 -> ICD-10 mapping
//   death_icd10      <- 40000-series cause of death
enum class Source { self_report, hospital_icd10, hospital_icd9, gp_icd10_mapped, death_icd10 };

std::string_view to_string(Source s);
Source source_from_string(std::string_view s);

/// Calendar date; validity is checked at parse time.
struct Date {
  int year = 0;
  int month = 0;
  int day = 0;
  auto operator<=>(const Date&) const = default;
};

std::optional<Date> parse_iso_date(std::string_view text);

struct MedicalRecord {
  Source source = Source::self_report;
  std::string code;
  std::string date;  // ISO yyyy-mm-dd
  bool primary_cause = false;
};

/// Code sets. A code of category length (3 characters for ICD-10, 3 digits
/// for ICD-9) matches every subcode by prefix; longer codes match exactly.
struct LabelRuleset {
  std::vector<std::string> self_report_codes{"1112", "1113", "1472"};
  std::vector<std::string> icd10_prefixes{"J43", "J440", "J441", "J449"};
  std::vector<std::string> icd9_codes{"492", "496"};
  std::vector<std::string> mortality_extra_icd10{"J41"};
};

LabelRuleset ruleset_from_json(const std::string& json_text);
std::string ruleset_to_json(const LabelRuleset& rules);

struct Diagnostic {
  std::size_t record_index = 0;
  std::string message;
};

struct LabelResult {
  EndpointLabels labels;
  std::vector<Diagnostic> rejected;
};

/// Uppercases and strips '.' so "j44.9" and "J449" compare equal.
std::string normalize_code(std::string_view code);

/// Rule matching for an already normalized code of the given source.
bool matches_copd(const MedicalRecord& r, const LabelRuleset& rules);
bool matches_mortality(const MedicalRecord& r, const LabelRuleset& rules);

/// copd_risk: a COPD code from any non-death source dated after the test.
/// exacerbation: a hospital COPD code with primary_cause, dated after the test.
/// mortality: a death record with a COPD or extra-mortality code.
/// Malformed records are skipped and reported in `rejected`.
LabelResult map_records(const std::vector<MedicalRecord>& records, const std::string& spiro_date,
                        const LabelRuleset& rules = {});

/// Read v2/v3 -> ICD-10 lookup, loaded from a two-column CSV (read_code,icd10).
using ReadCodeMap = std::map<std::string, std::string>;
ReadCodeMap read_code_map_from_csv(std::istream& in);

/// Converts a GP record carrying a Read code into a gp_icd10_mapped record,
/// or nothing when the code has no mapping.
std::optional<MedicalRecord> map_gp_record(const std::string& read_code, const std::string& date,
                                           const ReadCodeMap& map);

MedicalRecord record_from_json(const std::string& json_text);

}  // namespace spiro::labels
