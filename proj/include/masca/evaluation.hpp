#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "masca/dataset.hpp"
#include "masca/orchestrator.hpp"

namespace masca {

struct ConfusionMatrix {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;
  CreditLabel positive_class = CreditLabel::good;

  long total() const { return tp + fp + fn + tn; }
};

ConfusionMatrix confusion(const std::vector<std::pair<CreditLabel, CreditLabel>>& decisions,
                          CreditLabel positive_class);

/// Zero-denominator metrics are explicitly undefined (nullopt), never 0.
struct Metrics {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

Metrics compute_metrics(const ConfusionMatrix& m);

struct RunRow {
  std::string name;
  ConfusionMatrix matrix;
  Metrics metrics;
  long scored = 0;
  long unscored = 0;   // decisions that could not be parsed
  long unlabeled = 0;  // records with no ground truth
  std::string dataset_sha256;
  std::string prompts_digest;  // combined checksum over role prompts
};

struct EvaluationReport {
  std::vector<RunRow> rows;
  std::vector<std::string> notes;  // skipped/corrupt inputs, strict-mode flag
};

/// Scores one run directory, or every immediate subdirectory holding a
/// transcripts.jsonl when the directory itself has none. With strict=true,
/// unparseable decisions count as wrong instead of being excluded.
EvaluationReport evaluate_run(const std::filesystem::path& run_dir, CreditLabel positive_class,
                              bool strict = false);

/// Table-style markdown. With exactly two rows and with_delta, appends
/// percentage-point delta columns (second row minus first).
std::string report_markdown(const EvaluationReport& report, bool with_delta = false);

/// CSV schema: name,accuracy,precision,recall,f1,unscored (percent values,
/// empty cell when undefined).
std::string report_csv(const EvaluationReport& report);

/// Per-configuration confusion matrices as a JSON document.
std::string confusion_json(const EvaluationReport& report);

void write_evaluation(const EvaluationReport& report, const std::filesystem::path& out_dir,
                      bool with_delta = false);

}  // namespace masca
