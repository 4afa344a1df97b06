#include "masca/features.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

#include "masca/builtin_assets.hpp"
#include "masca/util.hpp"

namespace masca {

using json = nlohmann::json;

BucketTable BucketTable::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("bucket table: invalid JSON: ") + ex.what());
  }
  BucketTable table;
  for (const auto& [attribute_id, codes] : doc.items()) {
    for (const auto& [code, midpoint] : codes.items()) {
      if (midpoint.is_null()) {
        table.buckets_[attribute_id][code] = std::nullopt;
      } else if (midpoint.is_number()) {
        const double v = midpoint.get<double>();
        if (!std::isfinite(v) || v < 0) {
          throw ConfigError("bucket table: " + attribute_id + "/" + code +
                            " must be a finite non-negative number");
        }
        table.buckets_[attribute_id][code] = v;
      } else {
        throw ConfigError("bucket table: " + attribute_id + "/" + code +
                          " must be a number or null");
      }
    }
  }
  return table;
}

BucketTable BucketTable::from_file(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

const BucketTable& BucketTable::builtin() {
  static const BucketTable table = from_json_text(assets::kBucketTableJson);
  return table;
}

Quantity BucketTable::lookup(const std::string& attribute_id, const std::string& code) const {
  auto attr_it = buckets_.find(attribute_id);
  if (attr_it == buckets_.end()) {
    return Quantity::missing("no bucket table for " + attribute_id);
  }
  auto code_it = attr_it->second.find(code);
  if (code_it == attr_it->second.end()) {
    return Quantity::missing("no bucket for code " + code);
  }
  if (!code_it->second.has_value()) {
    return Quantity::missing("no monetary bucket");
  }
  return Quantity::of(*code_it->second, attribute_id + "=" + code + " midpoint");
}

namespace {

Quantity numeric_attr(const ApplicantRecord& record, const std::string& id) {
  auto it = record.values.find(id);
  if (it == record.values.end()) {
    return Quantity::missing("attribute " + id + " missing");
  }
  const double* v = std::get_if<double>(&it->second);
  if (!v) {
    return Quantity::missing("attribute " + id + " is not numeric");
  }
  return Quantity::of(*v, id);
}

Quantity bucketed_attr(const ApplicantRecord& record, const std::string& id,
                       const BucketTable& buckets) {
  auto it = record.values.find(id);
  if (it == record.values.end()) {
    return Quantity::missing("attribute " + id + " missing");
  }
  const std::string* code = std::get_if<std::string>(&it->second);
  if (!code) {
    return Quantity::missing("attribute " + id + " is not categorical");
  }
  return buckets.lookup(id, *code);
}

/// Guarded division: unavailable when either side is missing or the
/// denominator is zero. Infinity and NaN never escape.
Quantity divide(const Quantity& num, const Quantity& den, const std::string& num_name,
                const std::string& den_name, double scale = 1.0) {
  if (!num.available()) return Quantity::missing(num.reason.empty() ? num_name : num.reason);
  if (!den.available()) return Quantity::missing(den.reason.empty() ? den_name : den.reason);
  if (*den.value == 0.0) return Quantity::missing("division by zero (" + den_name + ")");
  const double v = (*num.value / *den.value) * scale;
  if (!std::isfinite(v)) return Quantity::missing("non-finite result");
  return Quantity::of(v, num_name + "/" + den_name);
}

}  // namespace

NumericizedAttributes numericize(const ApplicantRecord& record, const AttributeSchema& schema,
                                 const BucketTable& buckets, const IncomeEstimator& income) {
  (void)schema;  // record is assumed validated; ids below are the schema's fixed ids
  NumericizedAttributes n;
  n.installment_rate_pct = numeric_attr(record, "X8");
  n.credit_amount = numeric_attr(record, "X5");
  n.duration_months = numeric_attr(record, "X2");
  n.age_years = numeric_attr(record, "X13");
  n.dependents_count = numeric_attr(record, "X18");
  n.existing_credits_count = numeric_attr(record, "X16");
  n.savings_value = bucketed_attr(record, "X6", buckets);
  n.employment_years = bucketed_attr(record, "X7", buckets);
  n.checking_value = bucketed_attr(record, "X1", buckets);
  n.disposable_income_proxy =
      income ? income(record) : Quantity::missing("no income estimate configured");
  return n;
}

FinancialRatios compute_ratios(const NumericizedAttributes& n) {
  FinancialRatios r;

  // The installment-rate attribute is already expressed as debt payments over
  // disposable income, in percent; DTI passes it through unscaled.
  r.dti_pct = n.installment_rate_pct.available()
                  ? Quantity::of(*n.installment_rate_pct.value, "installment rate pass-through")
                  : Quantity::missing("installment rate");

  // The dataset carries no asset valuation and no credit limit, so these two
  // are reported unavailable instead of being proxied.
  r.dar = Quantity::missing("assets");
  r.credit_utilization_pct = Quantity::missing("credit limit");

  // DSCR additionally needs the applicant's existing credit payments, which
  // no attribute provides; it stays unavailable even with an income estimate.
  if (!n.disposable_income_proxy.available()) {
    r.dscr = Quantity::missing(n.disposable_income_proxy.reason.empty()
                                   ? "income estimate"
                                   : n.disposable_income_proxy.reason);
  } else {
    r.dscr = Quantity::missing("existing credit payments");
  }

  r.savings_to_income_pct =
      divide(n.savings_value, n.disposable_income_proxy, "savings", "income estimate", 100.0);

  r.employment_stability_index =
      divide(n.employment_years, n.age_years, "employment years", "age");

  r.dependents_burden_ratio =
      divide(n.dependents_count, n.disposable_income_proxy, "dependents", "income estimate");

  return r;
}

namespace {

void report_line(std::ostringstream& out, const std::string& name, const Quantity& q,
                 bool percent) {
  out << name << ": ";
  if (q.available()) {
    out << format_fixed(*q.value, 4);
    if (percent) out << " %";
  } else {
    out << "not computable: " << q.reason;
  }
  out << "\n";
}

}  // namespace

std::string ratios_report(const FinancialRatios& r) {
  std::ostringstream out;
  report_line(out, "Debt-to-Income Ratio", r.dti_pct, true);
  report_line(out, "Debt-to-Asset Ratio", r.dar, false);
  report_line(out, "Debt Service Coverage Ratio", r.dscr, false);
  report_line(out, "Credit Utilization Ratio", r.credit_utilization_pct, true);
  report_line(out, "Savings-to-Income Ratio", r.savings_to_income_pct, true);
  report_line(out, "Employment Stability Index", r.employment_stability_index, false);
  report_line(out, "Dependents Burden Ratio", r.dependents_burden_ratio, false);
  return out.str();
}

}  // namespace masca
