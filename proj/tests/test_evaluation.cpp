#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "masca/evaluation.hpp"
#include "masca/util.hpp"

using namespace masca;
using json = nlohmann::json;

namespace {

using Pairs = std::vector<std::pair<CreditLabel, CreditLabel>>;

/// Independent counting oracle, written as four separate scans.
ConfusionMatrix brute_force_confusion(const Pairs& pairs, CreditLabel positive) {
  ConfusionMatrix m;
  m.positive_class = positive;
  for (const auto& p : pairs) m.tp += (p.first == positive && p.second == positive) ? 1 : 0;
  for (const auto& p : pairs) m.fp += (p.first == positive && p.second != positive) ? 1 : 0;
  for (const auto& p : pairs) m.fn += (p.first != positive && p.second == positive) ? 1 : 0;
  for (const auto& p : pairs) m.tn += (p.first != positive && p.second != positive) ? 1 : 0;
  return m;
}

Pairs random_pairs(std::mt19937& rng, std::size_t n) {
  std::bernoulli_distribution coin(0.5);
  Pairs pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    pairs.emplace_back(coin(rng) ? CreditLabel::good : CreditLabel::bad,
                       coin(rng) ? CreditLabel::good : CreditLabel::bad);
  }
  return pairs;
}

std::filesystem::path make_run_dir(const std::string& name,
                                   const std::vector<Transcript>& transcripts) {
  const auto dir = std::filesystem::temp_directory_path() / "masca_eval_test" / name;
  std::filesystem::create_directories(dir);
  std::string lines;
  for (const Transcript& t : transcripts) lines += transcript_to_jsonl_line(t) + "\n";
  write_file_atomic(dir / "transcripts.jsonl", lines);
  json meta = {{"run_id", name},
               {"dataset", {{"sha256", "feedfacefeedface"}}},
               {"prompts", {{"risk_modeler", "abc123"}}}};
  write_file_atomic(dir / "meta.json", meta.dump(2));
  return dir;
}

Transcript scored_transcript(const std::string& id, std::optional<CreditLabel> decision,
                             std::optional<CreditLabel> label) {
  Transcript t;
  t.record_id = id;
  t.topology = "hierarchical3";
  t.decision = decision;
  t.decision_source = decision ? "agent" : "none";
  t.label = label;
  return t;
}

}  // namespace

TEST_CASE("confusion counting basics") {
  Pairs pairs;
  for (int i = 0; i < 5; ++i) pairs.emplace_back(CreditLabel::good, CreditLabel::good);
  for (int i = 0; i < 5; ++i) pairs.emplace_back(CreditLabel::bad, CreditLabel::bad);
  ConfusionMatrix m = confusion(pairs, CreditLabel::good);
  CHECK(m.tp == 5);
  CHECK(m.tn == 5);
  CHECK(m.fp == 0);
  CHECK(m.fn == 0);

  SUBCASE("flipping every prediction exchanges diagonal and off-diagonal") {
    Pairs flipped;
    for (const auto& p : pairs) {
      flipped.emplace_back(p.first == CreditLabel::good ? CreditLabel::bad : CreditLabel::good,
                           p.second);
    }
    ConfusionMatrix f = confusion(flipped, CreditLabel::good);
    CHECK(f.fn == m.tp);
    CHECK(f.fp == m.tn);
    CHECK(f.tp == m.fn);
    CHECK(f.tn == m.fp);
  }
}

TEST_CASE("confusion matches the brute-force counter on 200 random pairs") {
  std::mt19937 rng(5);
  const Pairs pairs = random_pairs(rng, 200);
  for (CreditLabel positive : {CreditLabel::good, CreditLabel::bad}) {
    ConfusionMatrix got = confusion(pairs, positive);
    ConfusionMatrix want = brute_force_confusion(pairs, positive);
    CHECK(got.tp == want.tp);
    CHECK(got.fp == want.fp);
    CHECK(got.fn == want.fn);
    CHECK(got.tn == want.tn);
    CHECK(got.total() == static_cast<long>(pairs.size()));
  }
}

TEST_CASE("metric formulas and undefined cases") {
  SUBCASE("perfect classifier scores 1.0 everywhere") {
    ConfusionMatrix m{5, 0, 0, 5, CreditLabel::good};
    Metrics metrics = compute_metrics(m);
    CHECK(*metrics.accuracy == 1.0);
    CHECK(*metrics.precision == 1.0);
    CHECK(*metrics.recall == 1.0);
    CHECK(*metrics.f1 == 1.0);
  }
  SUBCASE("accuracy identity: 60% of 200 means 120 correct") {
    ConfusionMatrix m{70, 30, 50, 50, CreditLabel::good};
    REQUIRE(m.total() == 200);
    Metrics metrics = compute_metrics(m);
    CHECK(*metrics.accuracy * m.total() == doctest::Approx(m.tp + m.tn));
    CHECK(*metrics.accuracy == doctest::Approx(0.60));
  }
  SUBCASE("zero denominators are undefined, never zero") {
    ConfusionMatrix m{0, 0, 3, 7, CreditLabel::good};
    Metrics metrics = compute_metrics(m);
    CHECK(!metrics.precision.has_value());
    CHECK(metrics.recall.has_value());
    ConfusionMatrix empty{0, 0, 0, 0, CreditLabel::good};
    Metrics none = compute_metrics(empty);
    CHECK(!none.accuracy.has_value());
    CHECK(!none.f1.has_value());
  }
}

TEST_CASE("matrix identities hold on fuzzed inputs") {
  std::mt19937 rng(6);
  for (int round = 0; round < 500; ++round) {
    const Pairs pairs = random_pairs(rng, 64);
    ConfusionMatrix m = confusion(pairs, CreditLabel::good);
    Metrics metrics = compute_metrics(m);
    CHECK(*metrics.accuracy * m.total() == doctest::Approx(m.tp + m.tn).epsilon(1e-12));
    if (metrics.precision && metrics.recall && metrics.f1) {
      const double harmonic =
          2.0 * *metrics.precision * *metrics.recall / (*metrics.precision + *metrics.recall);
      CHECK(std::abs(*metrics.f1 - harmonic) <= 1e-12);
    }
    for (const auto& value :
         {metrics.accuracy, metrics.precision, metrics.recall, metrics.f1}) {
      if (value) {
        CHECK(*value >= 0.0);
        CHECK(*value <= 1.0);
      }
    }
  }
}

TEST_CASE("evaluate_run scores transcripts and accounts for unscored records") {
  std::filesystem::remove_all(std::filesystem::temp_directory_path() / "masca_eval_test");
  std::vector<Transcript> transcripts;
  // 4 correct approvals, 2 wrong approvals, 1 correct denial, 3 unparseable
  for (int i = 0; i < 4; ++i)
    transcripts.push_back(scored_transcript("a" + std::to_string(i), CreditLabel::good,
                                            CreditLabel::good));
  for (int i = 0; i < 2; ++i)
    transcripts.push_back(scored_transcript("b" + std::to_string(i), CreditLabel::good,
                                            CreditLabel::bad));
  transcripts.push_back(scored_transcript("c0", CreditLabel::bad, CreditLabel::bad));
  for (int i = 0; i < 3; ++i)
    transcripts.push_back(scored_transcript("u" + std::to_string(i), std::nullopt,
                                            CreditLabel::good));
  const auto dir = make_run_dir("demo", transcripts);

  EvaluationReport report = evaluate_run(dir, CreditLabel::good, false);
  REQUIRE(report.rows.size() == 1);
  const RunRow& row = report.rows[0];
  CHECK(row.name == "demo");
  CHECK(row.scored == 7);
  CHECK(row.unscored == 3);
  CHECK(*row.metrics.accuracy == doctest::Approx(5.0 / 7.0));
  CHECK(row.dataset_sha256 == "feedfacefeedface");

  SUBCASE("strict mode counts unparseable decisions as wrong") {
    EvaluationReport strict = evaluate_run(dir, CreditLabel::good, true);
    const RunRow& srow = strict.rows[0];
    CHECK(srow.scored == 10);
    CHECK(srow.unscored == 3);  // still disclosed
    CHECK(*srow.metrics.accuracy == doctest::Approx(5.0 / 10.0));
  }

  SUBCASE("evaluation is idempotent") {
    EvaluationReport again = evaluate_run(dir, CreditLabel::good, false);
    CHECK(report_markdown(again) == report_markdown(report));
    CHECK(report_csv(again) == report_csv(report));
    CHECK(confusion_json(again) == confusion_json(report));
  }

  SUBCASE("markdown and csv formatting") {
    const std::string md = report_markdown(report);
    CHECK(md.find("| demo | 71.43% |") != std::string::npos);
    CHECK(md.find("dataset sha256 feedfacefeedface") != std::string::npos);
    const std::string csv = report_csv(report);
    CHECK(csv.find("name,accuracy,precision,recall,f1,unscored") == 0);
    CHECK(csv.find("demo,71.43,") != std::string::npos);
  }
}

TEST_CASE("undefined metrics render as an em dash cell") {
  std::vector<Transcript> transcripts = {
      scored_transcript("x", CreditLabel::bad, CreditLabel::bad)};
  const auto dir = make_run_dir("nodenom", transcripts);
  EvaluationReport report = evaluate_run(dir, CreditLabel::good, false);
  CHECK(report_markdown(report).find("—") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate_run over a parent directory emits one row per run") {
  std::filesystem::remove_all(std::filesystem::temp_directory_path() / "masca_eval_test");
  (void)make_run_dir("one", {scored_transcript("r", CreditLabel::good, CreditLabel::good)});
  (void)make_run_dir("two", {scored_transcript("r", CreditLabel::bad, CreditLabel::good)});
  const auto parent = std::filesystem::temp_directory_path() / "masca_eval_test";
  EvaluationReport report = evaluate_run(parent, CreditLabel::good, false);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].name == "one");
  CHECK(report.rows[1].name == "two");

  SUBCASE("two-row reports can carry delta columns") {
    const std::string md = report_markdown(report, true);
    CHECK(md.find("Delta (two vs one)") != std::string::npos);
    CHECK(md.find("-100.00 pp") != std::string::npos);
  }
  std::filesystem::remove_all(parent);
}

TEST_CASE("corrupt transcript lines are skipped with a note") {
  const auto dir = make_run_dir("corrupt", {scored_transcript("ok", CreditLabel::good,
                                                              CreditLabel::good)});
  std::string content = read_file(dir / "transcripts.jsonl");
  content += "this is not json\n";
  write_file_atomic(dir / "transcripts.jsonl", content);
  EvaluationReport report = evaluate_run(dir, CreditLabel::good, false);
  CHECK(report.rows[0].scored == 1);
  REQUIRE(!report.notes.empty());
  CHECK(report.notes[0].find("corrupt") != std::string::npos);
  std::filesystem::remove_all(dir.parent_path());
}

TEST_CASE("missing run directory is a runtime error naming the path") {
  CHECK_THROWS_WITH_AS((void)evaluate_run("/definitely/not/here", CreditLabel::good, false),
                       doctest::Contains("/definitely/not/here"), DataError);
}
