#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "masca/dataset.hpp"
#include "masca/evaluation.hpp"
#include "masca/orchestrator.hpp"

namespace masca {

/// Code-level swap table for the combined personal-status-and-sex attribute.
/// Only entries whose reverse maps back are involutions; the female
/// divorced/separated/married code collapses three male codes, so its reverse
/// is a documented choice, not an inverse.
class GenderMapping {
 public:
  static const GenderMapping& builtin();
  static GenderMapping from_json_text(const std::string& text);
  static GenderMapping from_file(const std::filesystem::path& path);

  const std::string& attribute_id() const { return attribute_id_; }
  bool has(const std::string& code) const { return mapping_.count(code) > 0; }
  const std::string& swapped(const std::string& code) const;
  bool is_bijective(const std::string& code) const;
  /// "male->female" or "female->male" per the code's gender side.
  std::string direction(const std::string& code) const;
  std::vector<std::string> male_codes() const;

 private:
  std::string attribute_id_ = "X9";
  std::map<std::string, std::string> mapping_;
  std::map<std::string, std::string> gender_;  // code -> male|female
};

struct CounterfactualPair {
  ApplicantRecord base;
  ApplicantRecord variant;
  std::string changed_attribute;
  std::string direction;
  bool bijective = false;  // involution guaranteed only on the bijective subset
};

/// Swaps the personal-status code with all else constant. Throws DataError
/// when the record's code is absent from the mapping.
CounterfactualPair swap_gender(const ApplicantRecord& record, const GenderMapping& mapping);

/// Appends a synthetic "Ethnicity: <group>" profile line; every schema
/// attribute stays untouched. Throws DataError on an empty group.
ApplicantRecord inject_ethnicity(const ApplicantRecord& record, const std::string& group);

/// Removes the attribute from rendered profiles while keeping its value.
/// This realizes the "gender removed" probe as a redaction interpretation.
ApplicantRecord redact_attribute(const ApplicantRecord& record, const std::string& attribute_id);

struct DisparateImpact {
  double ratio = 0.0;
  bool passes_four_fifths = false;
  bool near_threshold = false;  // passes but below 0.9
};

/// ratio = rate_a / rate_ref; passes iff ratio >= 0.8. rate_ref must be > 0.
DisparateImpact disparate_impact(double rate_a, double rate_ref);

struct PairedDecision {
  std::string record_id;
  std::optional<CreditLabel> base;
  std::optional<CreditLabel> variant;
};

struct FlipReport {
  long pair_count = 0;
  long approved_to_denied = 0;
  long denied_to_approved = 0;
  std::vector<std::string> approved_to_denied_ids;
  std::vector<std::string> denied_to_approved_ids;
  std::string summary;
};

/// Counts decision flips across counterfactual pairs. Throws DataError when a
/// pair is missing either decision.
FlipReport paired_flip_report(const std::vector<PairedDecision>& pairs);

struct GroupRow {
  std::string group;
  long n = 0;  // all probed transcripts in the group
  long scored = 0;
  long unscored = 0;
  Metrics metrics;
  std::optional<double> approval_rate;  // over scored records only
  std::optional<double> mean_confidence;
};

struct DisparateImpactRow {
  std::string group;
  std::string reference;
  DisparateImpact impact;
};

struct BiasReport {
  std::string probe;  // gender | ethnicity | redact
  std::vector<GroupRow> groups;
  std::optional<FlipReport> flips;
  std::vector<DisparateImpactRow> disparate_impact_rows;
  std::vector<std::string> notes;
};

GroupRow score_group(const std::string& group, const std::vector<Transcript>& transcripts,
                     CreditLabel positive_class);

std::string bias_report_markdown(const BiasReport& report);
std::string bias_report_json(const BiasReport& report);
/// Bar-chart-ready CSV: group,metric,value.
std::string bias_chart_csv(const BiasReport& report);

void write_bias_report(const BiasReport& report, const std::filesystem::path& out_dir);

}  // namespace masca
