#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "masca/dataset.hpp"
#include "masca/features.hpp"
#include "masca/util.hpp"

using namespace masca;

namespace {

const std::filesystem::path kFixtures = std::filesystem::path(MASCA_TEST_DIR) / "fixtures";
const std::filesystem::path kGolden = std::filesystem::path(MASCA_TEST_DIR) / "golden";

// ---------------------------------------------------------------------------
// Independent oracle: a from-scratch re-statement of each ratio definition.
// Deliberately written as bare conditionals so it shares no helper code with
// the implementation under test.
// ---------------------------------------------------------------------------

struct OracleRatio {
  bool available = false;
  double value = 0.0;
};

struct OracleResult {
  OracleRatio dti, dar, dscr, utilization, savings_income, esi, dependents;
};

OracleResult oracle_ratios(const NumericizedAttributes& n) {
  OracleResult r;
  if (n.installment_rate_pct.value.has_value()) {
    r.dti = {true, *n.installment_rate_pct.value};
  }
  // dar: no asset valuation exists, never available
  // dscr: existing credit payments never available
  // utilization: no credit limit exists, never available
  if (n.savings_value.value.has_value() && n.disposable_income_proxy.value.has_value() &&
      *n.disposable_income_proxy.value != 0.0) {
    r.savings_income = {true, *n.savings_value.value / *n.disposable_income_proxy.value * 100.0};
  }
  if (n.employment_years.value.has_value() && n.age_years.value.has_value() &&
      *n.age_years.value != 0.0) {
    r.esi = {true, *n.employment_years.value / *n.age_years.value};
  }
  if (n.dependents_count.value.has_value() && n.disposable_income_proxy.value.has_value() &&
      *n.disposable_income_proxy.value != 0.0) {
    r.dependents = {true, *n.dependents_count.value / *n.disposable_income_proxy.value};
  }
  return r;
}

void check_against_oracle(const Quantity& got, const OracleRatio& want) {
  REQUIRE(got.available() == want.available);
  if (want.available) {
    CHECK(std::abs(*got.value - want.value) <= 1e-9);
  } else {
    CHECK(!got.reason.empty());
  }
}

NumericizedAttributes random_numericized(std::mt19937& rng) {
  std::uniform_real_distribution<double> value(0.0, 5000.0);
  std::uniform_real_distribution<double> small(0.0, 90.0);
  std::bernoulli_distribution coin(0.5);
  auto maybe = [&](double v) {
    return coin(rng) ? Quantity::of(v, "fuzz") : Quantity::missing("fuzz gap");
  };
  NumericizedAttributes n;
  n.disposable_income_proxy = maybe(value(rng));
  n.installment_rate_pct = maybe(small(rng) / 20.0);
  n.credit_amount = maybe(value(rng));
  n.duration_months = maybe(small(rng));
  n.savings_value = maybe(value(rng));
  n.employment_years = maybe(small(rng) / 10.0);
  n.age_years = maybe(small(rng));
  n.dependents_count = maybe(std::floor(small(rng) / 30.0));
  n.existing_credits_count = maybe(std::floor(small(rng) / 20.0));
  n.checking_value = maybe(value(rng));
  return n;
}

NumericizedAttributes fixture_numericized(std::size_t index, const IncomeEstimator& income = {}) {
  const AttributeSchema& schema = AttributeSchema::builtin();
  auto records = load_dataset(kFixtures / "two_records.statlog", schema, DatasetFormat::statlog);
  REQUIRE(records.size() > index);
  return numericize(records[index], schema, BucketTable::builtin(), income);
}

}  // namespace

TEST_CASE("bucket table midpoints follow the documented table") {
  const BucketTable& buckets = BucketTable::builtin();
  CHECK(*buckets.lookup("X6", "A61").value == 50.0);
  CHECK(*buckets.lookup("X6", "A62").value == 350.0);
  CHECK(*buckets.lookup("X6", "A63").value == 750.0);
  CHECK(*buckets.lookup("X6", "A64").value == 1500.0);
  CHECK(buckets.lookup("X6", "A65").reason == "no monetary bucket");
  CHECK(*buckets.lookup("X7", "A71").value == 0.0);
  CHECK(*buckets.lookup("X7", "A72").value == 0.5);
  CHECK(*buckets.lookup("X7", "A73").value == 2.5);
  CHECK(*buckets.lookup("X7", "A74").value == 5.5);
  CHECK(*buckets.lookup("X7", "A75").value == 8.0);
  CHECK(buckets.lookup("X1", "A14").reason == "no monetary bucket");
  CHECK(!buckets.lookup("X5", "A61").available());
}

TEST_CASE("numericize passes numerics through and buckets categoricals") {
  NumericizedAttributes n = fixture_numericized(0);
  CHECK(*n.age_years.value == 67.0);
  CHECK(*n.installment_rate_pct.value == 4.0);
  CHECK(*n.employment_years.value == 8.0);  // A75
  CHECK(!n.savings_value.available());      // A65
  CHECK(n.savings_value.reason == "no monetary bucket");
  CHECK(!n.disposable_income_proxy.available());

  SUBCASE("the income hook fills the proxy") {
    NumericizedAttributes with_income = fixture_numericized(
        0, [](const ApplicantRecord&) { return Quantity::of(2000.0, "test estimate"); });
    CHECK(*with_income.disposable_income_proxy.value == 2000.0);
  }
}

TEST_CASE("employment stability example value") {
  NumericizedAttributes n;
  n.employment_years = Quantity::of(2.5, "X7=A73 midpoint");
  n.age_years = Quantity::of(35.0, "X13");
  FinancialRatios r = compute_ratios(n);
  REQUIRE(r.employment_stability_index.available());
  CHECK(std::abs(*r.employment_stability_index.value - 2.5 / 35.0) <= 1e-9);
  CHECK(format_fixed(*r.employment_stability_index.value, 7) == "0.0714286");
}

TEST_CASE("dti is the installment-rate attribute passed through") {
  NumericizedAttributes n;
  n.installment_rate_pct = Quantity::of(4.0, "X8");
  FinancialRatios r = compute_ratios(n);
  REQUIRE(r.dti_pct.available());
  CHECK(*r.dti_pct.value == 4.0);
}

TEST_CASE("asset-backed ratios stay honestly unavailable") {
  NumericizedAttributes n;
  n.credit_amount = Quantity::of(2000.0, "X5");
  FinancialRatios r = compute_ratios(n);
  CHECK(!r.dar.available());
  CHECK(r.dar.reason == "assets");
  CHECK(!r.credit_utilization_pct.available());
  CHECK(r.credit_utilization_pct.reason == "credit limit");
}

TEST_CASE("ratios report formatting contract") {
  SUBCASE("dti line") {
    NumericizedAttributes n;
    n.installment_rate_pct = Quantity::of(4.0, "X8");
    const std::string report = ratios_report(compute_ratios(n));
    CHECK(report.find("Debt-to-Income Ratio: 4.0000 %") != std::string::npos);
  }
  SUBCASE("all-unavailable input lists 7 not-computable lines") {
    const std::string report = ratios_report(compute_ratios(NumericizedAttributes{}));
    std::size_t count = 0;
    std::size_t pos = 0;
    while ((pos = report.find("not computable:", pos)) != std::string::npos) {
      ++count;
      pos += 1;
    }
    CHECK(count == 7);
  }
  SUBCASE("fixture record matches the hand-checked golden report") {
    NumericizedAttributes n = fixture_numericized(0);
    CHECK(ratios_report(compute_ratios(n)) == read_file(kGolden / "ratios_report.txt"));
  }
}

TEST_CASE("compute_ratios agrees with the independent oracle on 1000 fuzz inputs") {
  std::mt19937 rng(42);
  for (int i = 0; i < 1000; ++i) {
    NumericizedAttributes n = random_numericized(rng);
    FinancialRatios got = compute_ratios(n);
    OracleResult want = oracle_ratios(n);
    check_against_oracle(got.dti_pct, want.dti);
    check_against_oracle(got.dar, want.dar);
    check_against_oracle(got.dscr, want.dscr);
    check_against_oracle(got.credit_utilization_pct, want.utilization);
    check_against_oracle(got.savings_to_income_pct, want.savings_income);
    check_against_oracle(got.employment_stability_index, want.esi);
    check_against_oracle(got.dependents_burden_ratio, want.dependents);

    // No NaN or infinity ever escapes; unavailability is the only escape hatch.
    for (const Quantity* q :
         {&got.dti_pct, &got.dar, &got.dscr, &got.credit_utilization_pct,
          &got.savings_to_income_pct, &got.employment_stability_index,
          &got.dependents_burden_ratio}) {
      if (q->available()) {
        CHECK(std::isfinite(*q->value));
      }
    }
  }
}

TEST_CASE("scale invariance of income-denominated ratios") {
  std::mt19937 rng(43);
  std::uniform_real_distribution<double> value(1.0, 5000.0);
  std::uniform_real_distribution<double> factor(0.1, 50.0);
  for (int i = 0; i < 200; ++i) {
    NumericizedAttributes n;
    n.savings_value = Quantity::of(value(rng), "fuzz");
    n.disposable_income_proxy = Quantity::of(value(rng), "fuzz");
    n.installment_rate_pct = Quantity::of(value(rng) / 1000.0, "fuzz");

    const double c = factor(rng);
    NumericizedAttributes scaled = n;
    scaled.savings_value = Quantity::of(*n.savings_value.value * c, "fuzz");
    scaled.disposable_income_proxy = Quantity::of(*n.disposable_income_proxy.value * c, "fuzz");

    FinancialRatios base = compute_ratios(n);
    FinancialRatios after = compute_ratios(scaled);
    CHECK(std::abs(*base.savings_to_income_pct.value - *after.savings_to_income_pct.value) <=
          1e-9 * std::max(1.0, std::abs(*base.savings_to_income_pct.value)));
    // DTI is already a ratio of its own numerator/denominator pair, so scaling
    // the income side must not move it.
    CHECK(*base.dti_pct.value == *after.dti_pct.value);
  }
}

TEST_CASE("dependents burden never decreases when dependents grow") {
  std::mt19937 rng(44);
  std::uniform_real_distribution<double> value(1.0, 5000.0);
  std::uniform_int_distribution<int> deps(0, 5);
  for (int i = 0; i < 200; ++i) {
    NumericizedAttributes n;
    n.disposable_income_proxy = Quantity::of(value(rng), "fuzz");
    const double d = deps(rng);
    n.dependents_count = Quantity::of(d, "fuzz");
    NumericizedAttributes more = n;
    more.dependents_count = Quantity::of(d + 1.0, "fuzz");

    FinancialRatios base = compute_ratios(n);
    FinancialRatios after = compute_ratios(more);
    REQUIRE(base.dependents_burden_ratio.available());
    REQUIRE(after.dependents_burden_ratio.available());
    CHECK(*after.dependents_burden_ratio.value >= *base.dependents_burden_ratio.value);
  }
}

TEST_CASE("division by zero becomes unavailable, not infinity") {
  NumericizedAttributes n;
  n.savings_value = Quantity::of(100.0, "fuzz");
  n.disposable_income_proxy = Quantity::of(0.0, "fuzz");
  n.employment_years = Quantity::of(2.0, "fuzz");
  n.age_years = Quantity::of(0.0, "fuzz");
  FinancialRatios r = compute_ratios(n);
  CHECK(!r.savings_to_income_pct.available());
  CHECK(!r.employment_stability_index.available());
  CHECK(r.employment_stability_index.reason.find("division by zero") != std::string::npos);
}
