#include "spiro/labels.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "spiro/errors.hpp"

namespace spiro::labels {

using nlohmann::json;

std::string_view to_string(Source s) {
  switch (s) {
    case Source::self_report: return "self_report";
    case Source::hospital_icd10: return "hospital_icd10";
    case Source::hospital_icd9: return "hospital_icd9";
    case Source::gp_icd10_mapped: return "gp_icd10_mapped";
    case Source::death_icd10: return "death_icd10";
  }
  return "unknown";
}

Source source_from_string(std::string_view s) {
  for (Source src : {Source::self_report, Source::hospital_icd10, Source::hospital_icd9,
                     Source::gp_icd10_mapped, Source::death_icd10}) {
    if (to_string(src) == s) return src;
  }
  fail(ErrorKind::data, "unknown record source '" + std::string(s) + "'");
}

std::optional<Date> parse_iso_date(std::string_view text) {
  static const std::regex pattern(R"(^(\d{4})-(\d{2})-(\d{2})$)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(text.begin(), text.end(), m, pattern)) return std::nullopt;
  Date d{std::stoi(m[1].str()), std::stoi(m[2].str()), std::stoi(m[3].str())};
  const std::chrono::year_month_day ymd{std::chrono::year{d.year},
                                        std::chrono::month{static_cast<unsigned>(d.month)},
                                        std::chrono::day{static_cast<unsigned>(d.day)}};
  if (!ymd.ok()) return std::nullopt;
  return d;
}

std::string normalize_code(std::string_view code) {
  std::string out;
  out.reserve(code.size());
  for (char c : code) {
    if (c == '.' || std::isspace(static_cast<unsigned char>(c))) continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

namespace {

bool well_formed(Source s, const std::string& code) {
  static const std::regex icd10(R"(^[A-Z][0-9]{2}[0-9A-Z]{0,2}$)");
  static const std::regex icd9(R"(^[0-9VE][0-9]{2}[0-9]{0,2}$)");
  static const std::regex self_report(R"(^[0-9]{1,6}$)");
  switch (s) {
    case Source::self_report: return std::regex_match(code, self_report);
    case Source::hospital_icd9: return std::regex_match(code, icd9);
    case Source::hospital_icd10:
    case Source::gp_icd10_mapped:
    case Source::death_icd10: return std::regex_match(code, icd10);
  }
  return false;
}

bool code_matches(const std::string& code, const std::vector<std::string>& rule_codes) {
  for (const std::string& raw : rule_codes) {
    const std::string rule = normalize_code(raw);
    if (rule.size() == 3) {
      if (code.compare(0, 3, rule) == 0) return true;
    } else if (code == rule) {
      return true;
    }
  }
  return false;
}

bool is_hospital(Source s) { return s == Source::hospital_icd10 || s == Source::hospital_icd9; }

}  // namespace

bool matches_copd(const MedicalRecord& r, const LabelRuleset& rules) {
  const std::string code = normalize_code(r.code);
  switch (r.source) {
    case Source::self_report:
      return std::find(rules.self_report_codes.begin(), rules.self_report_codes.end(), code) !=
             rules.self_report_codes.end();
    case Source::hospital_icd9: return code_matches(code, rules.icd9_codes);
    case Source::hospital_icd10:
    case Source::gp_icd10_mapped:
    case Source::death_icd10: return code_matches(code, rules.icd10_prefixes);
  }
  return false;
}

bool matches_mortality(const MedicalRecord& r, const LabelRuleset& rules) {
  if (r.source != Source::death_icd10) return false;
  const std::string code = normalize_code(r.code);
  return code_matches(code, rules.icd10_prefixes) ||
         code_matches(code, rules.mortality_extra_icd10);
}

LabelResult map_records(const std::vector<MedicalRecord>& records, const std::string& spiro_date,
                        const LabelRuleset& rules) {
  const auto test_date = parse_iso_date(spiro_date);
  require(test_date.has_value(), ErrorKind::data,
          "spirometry date '" + spiro_date + "' is not a valid ISO date");
  LabelResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const MedicalRecord& r = records[i];
    const std::string code = normalize_code(r.code);
    if (code.empty()) {
      out.rejected.push_back({i, "empty code"});
      continue;
    }
    if (!well_formed(r.source, code)) {
      out.rejected.push_back(
          {i, "malformed " + std::string(to_string(r.source)) + " code '" + r.code + "'"});
      continue;
    }
    const auto date = parse_iso_date(r.date);
    if (!date) {
      out.rejected.push_back({i, "invalid date '" + r.date + "'"});
      continue;
    }
    const bool after = *date > *test_date;
    if (r.source == Source::death_icd10) {
      if (matches_mortality(r, rules)) out.labels.mortality = 1;
      continue;
    }
    if (!matches_copd(r, rules)) continue;
    if (after) {
      out.labels.copd_risk = 1;
      if (is_hospital(r.source) && r.primary_cause) out.labels.exacerbation = 1;
    }
  }
  return out;
}

LabelRuleset ruleset_from_json(const std::string& json_text) {
  LabelRuleset rules;
  try {
    const json j = json::parse(json_text);
    auto read = [&](const char* key, std::vector<std::string>& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::vector<std::string>>();
    };
    read("self_report_codes", rules.self_report_codes);
    read("icd10_prefixes", rules.icd10_prefixes);
    read("icd9_codes", rules.icd9_codes);
    read("mortality_extra_icd10", rules.mortality_extra_icd10);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("invalid label ruleset: ") + e.what());
  }
  return rules;
}

std::string ruleset_to_json(const LabelRuleset& rules) {
  const json j{{"self_report_codes", rules.self_report_codes},
               {"icd10_prefixes", rules.icd10_prefixes},
               {"icd9_codes", rules.icd9_codes},
               {"mortality_extra_icd10", rules.mortality_extra_icd10}};
  return j.dump(2);
}

ReadCodeMap read_code_map_from_csv(std::istream& in) {
  ReadCodeMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, ErrorKind::data,
            "read-code map line " + std::to_string(line_no) + " has no comma");
    std::string read = line.substr(0, comma);
    std::string icd = normalize_code(line.substr(comma + 1));
    if (line_no == 1 && read == "read_code") continue;
    map[read] = icd;
  }
  return map;
}

std::optional<MedicalRecord> map_gp_record(const std::string& read_code, const std::string& date,
                                           const ReadCodeMap& map) {
  const auto it = map.find(read_code);
  if (it == map.end()) return std::nullopt;
  return MedicalRecord{Source::gp_icd10_mapped, it->second, date, false};
}

MedicalRecord record_from_json(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    MedicalRecord r;
    r.source = source_from_string(j.at("source").get<std::string>());
    r.code = j.at("code").get<std::string>();
    r.date = j.at("date").get<std::string>();
    r.primary_cause = j.value("primary_cause", false);
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::data, std::string("invalid medical record: ") + e.what());
  }
}

}  // namespace spiro::labels
