#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "masca/dataset.hpp"

namespace masca {

/// A financial quantity that is either a finite non-negative number with its
/// provenance, or unavailable with the missing input named. There is no third
/// state: ratios never surface NaN or infinities.
struct Quantity {
  std::optional<double> value;
  std::string source;  // attribute id / estimator note when available
  std::string reason;  // missing-input name when unavailable

  bool available() const { return value.has_value(); }

  static Quantity of(double v, std::string src) { return {v, std::move(src), {}}; }
  static Quantity missing(std::string why) { return {std::nullopt, {}, std::move(why)}; }
};

/// Maps bucketed categorical codes (savings, employment, checking) to
/// documented midpoints. An entry of null means the code has no monetary
/// interpretation and numericizes to unavailable.
class BucketTable {
 public:
  static BucketTable from_json_text(const std::string& text);
  static BucketTable from_file(const std::filesystem::path& path);
  static const BucketTable& builtin();

  /// Midpoint for (attribute, code): value, or unavailable with reason.
  Quantity lookup(const std::string& attribute_id, const std::string& code) const;

 private:
  // attribute id -> code -> midpoint (nullopt = no monetary bucket)
  std::map<std::string, std::map<std::string, std::optional<double>>> buckets_;
};

struct NumericizedAttributes {
  Quantity disposable_income_proxy;  // unavailable unless an estimator is configured
  Quantity installment_rate_pct;
  Quantity credit_amount;
  Quantity duration_months;
  Quantity savings_value;
  Quantity employment_years;
  Quantity age_years;
  Quantity dependents_count;
  Quantity existing_credits_count;
  Quantity checking_value;
};

/// Optional hook supplying a disposable-income estimate for a record.
using IncomeEstimator = std::function<Quantity(const ApplicantRecord&)>;

NumericizedAttributes numericize(const ApplicantRecord& record,
                                 const AttributeSchema& schema,
                                 const BucketTable& buckets,
                                 const IncomeEstimator& income = {});

struct FinancialRatios {
  Quantity dti_pct;
  Quantity dar;
  Quantity dscr;
  Quantity credit_utilization_pct;
  Quantity savings_to_income_pct;
  Quantity employment_stability_index;
  Quantity dependents_burden_ratio;
};

FinancialRatios compute_ratios(const NumericizedAttributes& n);

/// Fixed-order text block (7 lines) for agent context and golden fixtures.
/// Numbers carry 4 decimals; unavailable entries read "not computable: <why>".
std::string ratios_report(const FinancialRatios& r);

}  // namespace masca
