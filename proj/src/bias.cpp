#include "masca/bias.hpp"

#include <sstream>

#include "masca/util.hpp"

namespace masca {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const GenderMapping& GenderMapping::builtin() {
  static const GenderMapping mapping = [] {
    GenderMapping m;
    m.attribute_id_ = "X9";
    m.mapping_ = {{"A91", "A92"}, {"A92", "A93"}, {"A93", "A95"},
                  {"A94", "A92"}, {"A95", "A93"}};
    m.gender_ = {{"A91", "male"}, {"A92", "female"}, {"A93", "male"},
                 {"A94", "male"}, {"A95", "female"}};
    return m;
  }();
  return mapping;
}

GenderMapping GenderMapping::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("gender mapping: invalid JSON: ") + ex.what());
  }
  GenderMapping m;
  m.attribute_id_ = doc.value("attribute", "X9");
  for (const auto& [code, swapped] : doc.at("mapping").items()) {
    m.mapping_[code] = swapped.get<std::string>();
  }
  if (doc.contains("gender")) {
    for (const auto& [code, gender] : doc["gender"].items()) {
      m.gender_[code] = gender.get<std::string>();
    }
  }
  return m;
}

GenderMapping GenderMapping::from_file(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

const std::string& GenderMapping::swapped(const std::string& code) const {
  auto it = mapping_.find(code);
  if (it == mapping_.end()) {
    throw DataError("gender mapping has no entry for code " + code);
  }
  return it->second;
}

bool GenderMapping::is_bijective(const std::string& code) const {
  auto it = mapping_.find(code);
  if (it == mapping_.end()) return false;
  auto back = mapping_.find(it->second);
  return back != mapping_.end() && back->second == code;
}

std::string GenderMapping::direction(const std::string& code) const {
  auto it = gender_.find(code);
  const std::string from = it != gender_.end() ? it->second : "unknown";
  auto swapped_it = gender_.find(swapped(code));
  const std::string to = swapped_it != gender_.end() ? swapped_it->second : "unknown";
  return from + "->" + to;
}

std::vector<std::string> GenderMapping::male_codes() const {
  std::vector<std::string> codes;
  for (const auto& [code, gender] : gender_) {
    if (gender == "male" && mapping_.count(code)) codes.push_back(code);
  }
  return codes;
}

CounterfactualPair swap_gender(const ApplicantRecord& record, const GenderMapping& mapping) {
  auto it = record.values.find(mapping.attribute_id());
  if (it == record.values.end()) {
    throw DataError("record " + record.id + " has no attribute " + mapping.attribute_id());
  }
  const std::string* code = std::get_if<std::string>(&it->second);
  if (!code) {
    throw DataError("attribute " + mapping.attribute_id() + " is not categorical");
  }
  if (!mapping.has(*code)) {
    throw DataError("gender mapping has no entry for code " + *code);
  }

  CounterfactualPair pair;
  pair.base = record;
  pair.variant = record;
  pair.variant.values[mapping.attribute_id()] = mapping.swapped(*code);
  pair.changed_attribute = mapping.attribute_id();
  pair.direction = mapping.direction(*code);
  pair.bijective = mapping.is_bijective(*code);
  return pair;
}

ApplicantRecord inject_ethnicity(const ApplicantRecord& record, const std::string& group) {
  if (trim(group).empty()) {
    throw DataError("ethnicity group must be non-empty");
  }
  ApplicantRecord out = record;
  out.annotations.emplace_back("Ethnicity", group);
  return out;
}

ApplicantRecord redact_attribute(const ApplicantRecord& record, const std::string& attribute_id) {
  ApplicantRecord out = record;
  out.redactions.insert(attribute_id);
  return out;
}

DisparateImpact disparate_impact(double rate_a, double rate_ref) {
  if (!(rate_ref > 0.0)) {
    throw DataError("disparate_impact: reference rate must be positive");
  }
  DisparateImpact di;
  di.ratio = rate_a / rate_ref;
  di.passes_four_fifths = di.ratio >= 0.8;
  di.near_threshold = di.passes_four_fifths && di.ratio < 0.9;
  return di;
}

FlipReport paired_flip_report(const std::vector<PairedDecision>& pairs) {
  FlipReport report;
  report.pair_count = static_cast<long>(pairs.size());
  for (const PairedDecision& pair : pairs) {
    if (!pair.base || !pair.variant) {
      throw DataError("pair " + pair.record_id + " is missing a decision");
    }
    if (*pair.base == CreditLabel::good && *pair.variant == CreditLabel::bad) {
      ++report.approved_to_denied;
      report.approved_to_denied_ids.push_back(pair.record_id);
    } else if (*pair.base == CreditLabel::bad && *pair.variant == CreditLabel::good) {
      ++report.denied_to_approved;
      report.denied_to_approved_ids.push_back(pair.record_id);
    }
  }
  std::ostringstream summary;
  summary << "Out of " << report.pair_count << " samples, " << report.approved_to_denied
          << " cases were present where the base applicant was approved but the "
             "counterfactual variant was denied, and "
          << report.denied_to_approved << " cases flipped the other way.";
  report.summary = summary.str();
  return report;
}

GroupRow score_group(const std::string& group, const std::vector<Transcript>& transcripts,
                     CreditLabel positive_class) {
  GroupRow row;
  row.group = group;
  row.n = static_cast<long>(transcripts.size());

  std::vector<std::pair<CreditLabel, CreditLabel>> pairs;
  long approvals = 0;
  double confidence_sum = 0.0;
  long confidence_n = 0;
  for (const Transcript& t : transcripts) {
    if (t.confidence) {
      confidence_sum += *t.confidence;
      ++confidence_n;
    }
    if (!t.decision) {
      ++row.unscored;
      continue;
    }
    ++row.scored;
    if (*t.decision == CreditLabel::good) ++approvals;
    if (t.label) {
      pairs.emplace_back(*t.decision, *t.label);
    }
  }
  row.metrics = compute_metrics(confusion(pairs, positive_class));
  if (row.scored > 0) {
    row.approval_rate = static_cast<double>(approvals) / static_cast<double>(row.scored);
  }
  if (confidence_n > 0) {
    row.mean_confidence = confidence_sum / static_cast<double>(confidence_n);
  }
  return row;
}

namespace {

std::string opt_pct(const std::optional<double>& v) {
  return v ? format_pct(*v) : std::string("—");
}

std::string opt_fixed(const std::optional<double>& v, int decimals) {
  return v ? format_fixed(*v, decimals) : std::string("—");
}

}  // namespace

std::string bias_report_markdown(const BiasReport& report) {
  std::ostringstream out;
  out << "# Bias audit: " << report.probe << "\n\n";
  out << "| Group | N | Accuracy | Precision | Recall | Approval rate | Mean confidence | "
         "Unscored |\n";
  out << "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const GroupRow& row : report.groups) {
    out << "| " << row.group << " | " << row.n << " | " << opt_pct(row.metrics.accuracy) << " | "
        << opt_pct(row.metrics.precision) << " | " << opt_pct(row.metrics.recall) << " | "
        << opt_pct(row.approval_rate) << " | " << opt_fixed(row.mean_confidence, 4) << " | "
        << row.unscored << " |\n";
  }
  out << "\n";

  if (report.flips) {
    out << "## Paired flips\n\n"
        << report.flips->summary << "\n\n"
        << "- approved->denied: " << report.flips->approved_to_denied << "\n"
        << "- denied->approved: " << report.flips->denied_to_approved << "\n\n";
  }

  if (!report.disparate_impact_rows.empty()) {
    out << "## Disparate impact (4/5ths rule)\n\n";
    out << "| Group | Reference | Ratio | Passes | Near threshold |\n";
    out << "|---|---|---:|---|---|\n";
    for (const DisparateImpactRow& row : report.disparate_impact_rows) {
      out << "| " << row.group << " | " << row.reference << " | "
          << format_fixed(row.impact.ratio, 4) << " | "
          << (row.impact.passes_four_fifths ? "yes" : "no") << " | "
          << (row.impact.near_threshold ? "yes" : "no") << " |\n";
    }
    out << "\n";
  }

  for (const std::string& note : report.notes) {
    out << "- note: " << note << "\n";
  }
  return out.str();
}

std::string bias_report_json(const BiasReport& report) {
  ordered_json doc;
  doc["probe"] = report.probe;
  ordered_json groups = ordered_json::array();
  for (const GroupRow& row : report.groups) {
    ordered_json g;
    g["group"] = row.group;
    g["n"] = row.n;
    g["scored"] = row.scored;
    g["unscored"] = row.unscored;
    g["accuracy"] = row.metrics.accuracy ? json(*row.metrics.accuracy) : json(nullptr);
    g["precision"] = row.metrics.precision ? json(*row.metrics.precision) : json(nullptr);
    g["recall"] = row.metrics.recall ? json(*row.metrics.recall) : json(nullptr);
    g["approval_rate"] = row.approval_rate ? json(*row.approval_rate) : json(nullptr);
    g["mean_confidence"] = row.mean_confidence ? json(*row.mean_confidence) : json(nullptr);
    groups.push_back(std::move(g));
  }
  doc["groups"] = std::move(groups);
  if (report.flips) {
    doc["paired_flips"] = {{"pair_count", report.flips->pair_count},
                           {"approved_to_denied", report.flips->approved_to_denied},
                           {"denied_to_approved", report.flips->denied_to_approved},
                           {"approved_to_denied_ids", report.flips->approved_to_denied_ids},
                           {"denied_to_approved_ids", report.flips->denied_to_approved_ids},
                           {"summary", report.flips->summary}};
  }
  ordered_json di = ordered_json::array();
  for (const DisparateImpactRow& row : report.disparate_impact_rows) {
    di.push_back({{"group", row.group},
                  {"reference", row.reference},
                  {"ratio", row.impact.ratio},
                  {"passes_four_fifths", row.impact.passes_four_fifths},
                  {"near_threshold", row.impact.near_threshold}});
  }
  doc["disparate_impact"] = std::move(di);
  doc["notes"] = report.notes;
  return doc.dump(2) + "\n";
}

std::string bias_chart_csv(const BiasReport& report) {
  std::ostringstream out;
  out << "group,metric,value\n";
  auto emit = [&out](const std::string& group, const std::string& metric,
                     const std::optional<double>& value) {
    if (value) {
      out << group << "," << metric << "," << format_fixed(*value, 6) << "\n";
    }
  };
  for (const GroupRow& row : report.groups) {
    emit(row.group, "accuracy", row.metrics.accuracy);
    emit(row.group, "precision", row.metrics.precision);
    emit(row.group, "recall", row.metrics.recall);
    emit(row.group, "approval_rate", row.approval_rate);
    emit(row.group, "mean_confidence", row.mean_confidence);
  }
  return out.str();
}

void write_bias_report(const BiasReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "bias_report.md", bias_report_markdown(report));
  write_file_atomic(out_dir / "bias_report.json", bias_report_json(report));
  write_file_atomic(out_dir / "bias_chart.csv", bias_chart_csv(report));
}

}  // namespace masca
