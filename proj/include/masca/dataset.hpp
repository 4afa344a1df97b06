#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace masca {

enum class CreditLabel { good, bad };

std::string to_string(CreditLabel label);
CreditLabel credit_label_from_string(const std::string& s);

enum class AttributeKind { categorical, numerical };

struct Attribute {
  std::string id;    // "X1".."X20"
  std::string name;  // human-readable name
  AttributeKind kind = AttributeKind::categorical;
  std::string unit;  // numerical attributes only ("months", "DM", ...)
  std::map<std::string, std::string> codebook;  // categorical code -> meaning
};

/// The 20-attribute credit codebook. Bundled copy is the standard German
/// credit schema; user-supplied schema files are validated to the same shape.
class AttributeSchema {
 public:
  static AttributeSchema from_json_text(const std::string& text);
  static AttributeSchema from_file(const std::filesystem::path& path);
  /// The bundled German credit schema (13 categorical, 7 numerical).
  static const AttributeSchema& builtin();

  const std::vector<Attribute>& attributes() const { return attributes_; }
  const Attribute* find(const std::string& id) const;
  bool has(const std::string& id) const { return find(id) != nullptr; }

 private:
  void validate() const;  // throws ConfigError listing every violation

  std::vector<Attribute> attributes_;
  std::map<std::string, std::size_t> index_;
};

using RecordValue = std::variant<std::string, double>;

struct ApplicantRecord {
  std::string id;
  std::map<std::string, RecordValue> values;
  std::optional<CreditLabel> label;
  /// Synthetic profile lines appended after the schema attributes
  /// (e.g. an injected ethnicity probe). Never part of the schema.
  std::vector<std::pair<std::string, std::string>> annotations;
  /// Attribute ids excluded from rendering (redaction probes). The value
  /// stays in `values`; only the profile omits it.
  std::set<std::string> redactions;

  bool operator==(const ApplicantRecord&) const = default;
};

/// Violations of the record-vs-schema contract, empty when the record is valid.
std::vector<std::string> validate_record(const ApplicantRecord& record,
                                         const AttributeSchema& schema);

enum class DatasetFormat { jsonl, statlog };

DatasetFormat dataset_format_from_string(const std::string& s);

std::vector<ApplicantRecord> load_dataset(const std::filesystem::path& path,
                                          const AttributeSchema& schema,
                                          DatasetFormat format);

/// Canonical on-disk form: one {id, values, label} object per line.
void save_dataset_jsonl(const std::vector<ApplicantRecord>& records,
                        const std::filesystem::path& path);

std::string record_to_jsonl_line(const ApplicantRecord& record);
ApplicantRecord record_from_jsonl_line(const std::string& line,
                                       const AttributeSchema& schema);

struct ProfileEntry {
  std::string attribute;    // id; empty for annotation lines
  std::string name;
  std::string value;
  std::string description;  // codebook meaning, or unit text for numericals

  bool operator==(const ProfileEntry&) const = default;
};

using StructuredProfile = std::vector<ProfileEntry>;

/// One entry per schema attribute in schema order (minus redactions),
/// then one entry per annotation. Throws DataError naming any missing id.
StructuredProfile render_structured(const ApplicantRecord& record,
                                    const AttributeSchema& schema);

/// Text block embedded into agent contexts. Deterministic per profile.
std::string profile_to_text(const StructuredProfile& profile);

/// Extracts a good/bad decision from free text. Accepts approve/deny/reject
/// synonyms; throws DataError when no token or conflicting tokens are found.
CreditLabel parse_label(const std::string& text);

}  // namespace masca
