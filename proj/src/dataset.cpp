#include "masca/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "masca/builtin_assets.hpp"
#include "masca/util.hpp"

namespace masca {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

json number_to_json(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9.0e15) {
    return json(static_cast<std::int64_t>(v));
  }
  return json(v);
}

std::string value_text(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9.0e15) {
    return std::to_string(static_cast<std::int64_t>(v));
  }
  return format_fixed(v, 4);
}

void throw_joined(const std::string& context, const std::vector<std::string>& violations) {
  if (violations.empty()) return;
  std::ostringstream msg;
  msg << context << ": ";
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) msg << "; ";
    msg << violations[i];
  }
  throw DataError(msg.str());
}

}  // namespace

std::string to_string(CreditLabel label) {
  return label == CreditLabel::good ? "good" : "bad";
}

CreditLabel credit_label_from_string(const std::string& s) {
  if (s == "good") return CreditLabel::good;
  if (s == "bad") return CreditLabel::bad;
  throw DataError("unknown credit label: " + s);
}

AttributeSchema AttributeSchema::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("schema: invalid JSON: ") + ex.what());
  }
  if (!doc.is_object() || !doc.contains("attributes") || !doc["attributes"].is_array()) {
    throw ConfigError("schema: expected object with an \"attributes\" array");
  }

  AttributeSchema schema;
  for (const auto& a : doc["attributes"]) {
    Attribute attr;
    attr.id = a.value("id", "");
    attr.name = a.value("name", "");
    const std::string kind = a.value("kind", "");
    if (kind == "categorical") {
      attr.kind = AttributeKind::categorical;
    } else if (kind == "numerical") {
      attr.kind = AttributeKind::numerical;
    } else {
      throw ConfigError("schema: attribute " + attr.id + " has unknown kind \"" + kind + "\"");
    }
    attr.unit = a.value("unit", "");
    if (a.contains("codebook")) {
      for (const auto& [code, meaning] : a["codebook"].items()) {
        attr.codebook[code] = meaning.get<std::string>();
      }
    }
    schema.index_[attr.id] = schema.attributes_.size();
    schema.attributes_.push_back(std::move(attr));
  }
  schema.validate();
  return schema;
}

AttributeSchema AttributeSchema::from_file(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

const AttributeSchema& AttributeSchema::builtin() {
  static const AttributeSchema schema = from_json_text(assets::kGermanSchemaJson);
  return schema;
}

const Attribute* AttributeSchema::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return nullptr;
  return &attributes_[it->second];
}

void AttributeSchema::validate() const {
  std::vector<std::string> violations;
  if (attributes_.size() != 20) {
    violations.push_back("expected 20 attributes, got " + std::to_string(attributes_.size()));
  }
  std::size_t categorical = 0;
  std::size_t numerical = 0;
  std::set<std::string> seen;
  for (const auto& attr : attributes_) {
    if (attr.id.empty()) violations.push_back("attribute with empty id");
    if (!seen.insert(attr.id).second) violations.push_back("duplicate attribute id " + attr.id);
    if (attr.kind == AttributeKind::categorical) {
      ++categorical;
      if (attr.codebook.empty()) {
        violations.push_back("categorical attribute " + attr.id + " has empty codebook");
      }
    } else {
      ++numerical;
    }
  }
  if (attributes_.size() == 20 && categorical != 13) {
    violations.push_back("expected 13 categorical attributes, got " + std::to_string(categorical));
  }
  if (attributes_.size() == 20 && numerical != 7) {
    violations.push_back("expected 7 numerical attributes, got " + std::to_string(numerical));
  }
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "schema invalid: ";
    for (std::size_t i = 0; i < violations.size(); ++i) {
      if (i) msg << "; ";
      msg << violations[i];
    }
    throw ConfigError(msg.str());
  }
}

std::vector<std::string> validate_record(const ApplicantRecord& record,
                                         const AttributeSchema& schema) {
  std::vector<std::string> violations;
  for (const auto& [id, value] : record.values) {
    const Attribute* attr = schema.find(id);
    if (!attr) {
      violations.push_back("unknown attribute " + id);
      continue;
    }
    if (attr->kind == AttributeKind::categorical) {
      const std::string* code = std::get_if<std::string>(&value);
      if (!code) {
        violations.push_back("attribute " + id + " expects a categorical code");
      } else if (!attr->codebook.count(*code)) {
        violations.push_back("unknown code " + *code + " for attribute " + id);
      }
    } else {
      const double* num = std::get_if<double>(&value);
      if (!num) {
        violations.push_back("attribute " + id + " expects a number");
      } else if (!std::isfinite(*num)) {
        violations.push_back("attribute " + id + " is not finite");
      } else if (*num < 0) {
        violations.push_back("attribute " + id + " is negative");
      }
    }
  }
  return violations;
}

DatasetFormat dataset_format_from_string(const std::string& s) {
  if (s == "jsonl") return DatasetFormat::jsonl;
  if (s == "statlog") return DatasetFormat::statlog;
  throw ConfigError("unknown dataset format \"" + s + "\" (expected jsonl or statlog)");
}

namespace {

ApplicantRecord parse_statlog_line(const std::string& line, std::size_t line_no,
                                   const AttributeSchema& schema) {
  std::istringstream in(line);
  std::vector<std::string> columns;
  std::string tok;
  while (in >> tok) columns.push_back(tok);

  const std::size_t expected = schema.attributes().size() + 1;
  if (columns.size() != expected) {
    throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                    " columns, got " + std::to_string(columns.size()));
  }

  ApplicantRecord record;
  record.id = "r" + std::to_string(line_no);
  for (std::size_t i = 0; i < schema.attributes().size(); ++i) {
    const Attribute& attr = schema.attributes()[i];
    const std::string& cell = columns[i];
    if (attr.kind == AttributeKind::categorical) {
      record.values[attr.id] = cell;
    } else {
      try {
        record.values[attr.id] = std::stod(cell);
      } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": attribute " + attr.id +
                        " expects a number, got \"" + cell + "\"");
      }
    }
  }
  const std::string& label = columns.back();
  if (label == "1") {
    record.label = CreditLabel::good;
  } else if (label == "2") {
    record.label = CreditLabel::bad;
  } else {
    throw DataError("line " + std::to_string(line_no) + ": unknown label \"" + label +
                    "\" (expected 1 or 2)");
  }
  throw_joined("line " + std::to_string(line_no), validate_record(record, schema));
  return record;
}

}  // namespace

ApplicantRecord record_from_jsonl_line(const std::string& line, const AttributeSchema& schema) {
  json doc = json::parse(line);
  ApplicantRecord record;
  record.id = doc.at("id").get<std::string>();
  for (const auto& [key, value] : doc.at("values").items()) {
    if (value.is_string()) {
      record.values[key] = value.get<std::string>();
    } else if (value.is_number()) {
      record.values[key] = value.get<double>();
    } else {
      throw DataError("attribute " + key + " has unsupported value type");
    }
  }
  if (doc.contains("label") && !doc["label"].is_null()) {
    record.label = credit_label_from_string(doc["label"].get<std::string>());
  }
  if (doc.contains("annotations")) {
    for (const auto& a : doc["annotations"]) {
      record.annotations.emplace_back(a.at("name").get<std::string>(),
                                      a.at("value").get<std::string>());
    }
  }
  if (doc.contains("redactions")) {
    for (const auto& r : doc["redactions"]) {
      record.redactions.insert(r.get<std::string>());
    }
  }
  throw_joined("record " + record.id, validate_record(record, schema));
  return record;
}

std::string record_to_jsonl_line(const ApplicantRecord& record) {
  ordered_json doc;
  doc["id"] = record.id;
  ordered_json values = ordered_json::object();
  for (const auto& [key, value] : record.values) {
    if (const std::string* code = std::get_if<std::string>(&value)) {
      values[key] = *code;
    } else {
      values[key] = number_to_json(std::get<double>(value));
    }
  }
  doc["values"] = std::move(values);
  doc["label"] = record.label ? json(to_string(*record.label)) : json(nullptr);
  if (!record.annotations.empty()) {
    ordered_json annotations = ordered_json::array();
    for (const auto& [name, value] : record.annotations) {
      annotations.push_back({{"name", name}, {"value", value}});
    }
    doc["annotations"] = std::move(annotations);
  }
  if (!record.redactions.empty()) {
    doc["redactions"] = record.redactions;
  }
  return doc.dump();
}

std::vector<ApplicantRecord> load_dataset(const std::filesystem::path& path,
                                          const AttributeSchema& schema,
                                          DatasetFormat format) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot read dataset: " + path.string());
  }
  std::vector<ApplicantRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (format == DatasetFormat::statlog) {
      records.push_back(parse_statlog_line(line, line_no, schema));
    } else {
      try {
        records.push_back(record_from_jsonl_line(line, schema));
      } catch (const json::exception& ex) {
        throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + ex.what());
      } catch (const DataError& ex) {
        throw DataError("line " + std::to_string(line_no) + ": " + ex.what());
      }
    }
  }
  return records;
}

void save_dataset_jsonl(const std::vector<ApplicantRecord>& records,
                        const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& record : records) {
    out << record_to_jsonl_line(record) << "\n";
  }
  write_file_atomic(path, out.str());
}

StructuredProfile render_structured(const ApplicantRecord& record,
                                    const AttributeSchema& schema) {
  throw_joined("record " + record.id, validate_record(record, schema));

  StructuredProfile profile;
  for (const Attribute& attr : schema.attributes()) {
    if (record.redactions.count(attr.id)) continue;
    auto it = record.values.find(attr.id);
    if (it == record.values.end()) {
      throw DataError("record " + record.id + " is missing attribute " + attr.id);
    }
    ProfileEntry entry;
    entry.attribute = attr.id;
    entry.name = attr.name;
    if (attr.kind == AttributeKind::categorical) {
      const std::string& code = std::get<std::string>(it->second);
      entry.value = code;
      entry.description = attr.codebook.at(code);
    } else {
      entry.value = value_text(std::get<double>(it->second));
      entry.description = attr.unit;
    }
    profile.push_back(std::move(entry));
  }
  for (const auto& [name, value] : record.annotations) {
    ProfileEntry entry;
    entry.name = name;
    entry.value = value;
    profile.push_back(std::move(entry));
  }
  return profile;
}

std::string profile_to_text(const StructuredProfile& profile) {
  std::ostringstream out;
  for (const ProfileEntry& entry : profile) {
    if (entry.attribute.empty()) {
      out << entry.name << ": " << entry.value << "\n";
      continue;
    }
    out << entry.attribute << ". " << entry.name << ": " << entry.value;
    if (!entry.description.empty()) {
      out << " (" << entry.description << ")";
    }
    out << "\n";
  }
  return out.str();
}

CreditLabel parse_label(const std::string& text) {
  static const std::set<std::string> kGoodTokens = {"good", "approve", "approved", "approves"};
  static const std::set<std::string> kBadTokens = {"bad",    "deny",     "denied", "denies",
                                                   "reject", "rejected", "rejects"};
  const std::string lowered = to_lower(text);

  bool found_good = false;
  bool found_bad = false;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (kGoodTokens.count(word)) found_good = true;
    if (kBadTokens.count(word)) found_bad = true;
    word.clear();
  };
  for (char c : lowered) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(c);
    } else {
      flush();
    }
  }
  flush();

  if (found_good && found_bad) {
    throw DataError("unparseable decision: conflicting good/bad tokens");
  }
  if (found_good) return CreditLabel::good;
  if (found_bad) return CreditLabel::bad;
  throw DataError("unparseable decision: no good/bad token found");
}

}  // namespace masca
