#include "masca/evaluation.hpp"

#include <algorithm>
#include <sstream>

#include "masca/util.hpp"

namespace masca {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

ConfusionMatrix confusion(const std::vector<std::pair<CreditLabel, CreditLabel>>& decisions,
                          CreditLabel positive_class) {
  ConfusionMatrix m;
  m.positive_class = positive_class;
  for (const auto& [predicted, actual] : decisions) {
    const bool pred_pos = predicted == positive_class;
    const bool actual_pos = actual == positive_class;
    if (pred_pos && actual_pos) ++m.tp;
    else if (pred_pos && !actual_pos) ++m.fp;
    else if (!pred_pos && actual_pos) ++m.fn;
    else ++m.tn;
  }
  return m;
}

Metrics compute_metrics(const ConfusionMatrix& m) {
  Metrics out;
  const long n = m.total();
  if (n > 0) {
    out.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(n);
  }
  if (m.tp + m.fp > 0) {
    out.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  }
  if (m.tp + m.fn > 0) {
    out.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  }
  if (out.precision && out.recall && (*out.precision + *out.recall) > 0.0) {
    out.f1 = 2.0 * *out.precision * *out.recall / (*out.precision + *out.recall);
  }
  return out;
}

namespace {

struct ScoredRun {
  RunRow row;
  std::vector<std::string> notes;
};

ScoredRun score_one(const std::filesystem::path& run_dir, CreditLabel positive_class,
                    bool strict) {
  ScoredRun result;
  result.row.name = run_dir.filename().string();

  const auto meta_path = run_dir / "meta.json";
  if (std::filesystem::exists(meta_path)) {
    try {
      json meta = json::parse(read_file(meta_path));
      if (meta.contains("run_id")) result.row.name = meta["run_id"].get<std::string>();
      if (meta.contains("dataset") && meta["dataset"].contains("sha256")) {
        result.row.dataset_sha256 = meta["dataset"]["sha256"].get<std::string>();
      }
      if (meta.contains("prompts")) {
        std::ostringstream joined;
        for (const auto& [role, checksum] : meta["prompts"].items()) {
          joined << role << ":" << checksum.get<std::string>() << "\n";
        }
        result.row.prompts_digest = sha256_hex(joined.str());
      }
    } catch (const std::exception& ex) {
      result.notes.push_back(result.row.name + ": unreadable meta.json (" + ex.what() + ")");
    }
  }

  std::vector<std::pair<CreditLabel, CreditLabel>> pairs;
  std::istringstream in(read_file(run_dir / "transcripts.jsonl"));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    Transcript t;
    try {
      t = transcript_from_jsonl_line(line);
    } catch (const std::exception& ex) {
      result.notes.push_back(result.row.name + ": corrupt transcript at line " +
                             std::to_string(line_no) + " (" + ex.what() + ")");
      continue;
    }
    if (!t.label) {
      ++result.row.unlabeled;
      continue;
    }
    if (!t.decision) {
      ++result.row.unscored;
      if (strict) {
        const CreditLabel wrong =
            *t.label == CreditLabel::good ? CreditLabel::bad : CreditLabel::good;
        pairs.emplace_back(wrong, *t.label);
      }
      continue;
    }
    pairs.emplace_back(*t.decision, *t.label);
  }

  result.row.scored = static_cast<long>(pairs.size());
  result.row.matrix = confusion(pairs, positive_class);
  result.row.metrics = compute_metrics(result.row.matrix);
  return result;
}

}  // namespace

EvaluationReport evaluate_run(const std::filesystem::path& run_dir, CreditLabel positive_class,
                              bool strict) {
  if (!std::filesystem::exists(run_dir)) {
    throw DataError("run directory does not exist: " + run_dir.string());
  }

  std::vector<std::filesystem::path> run_dirs;
  if (std::filesystem::exists(run_dir / "transcripts.jsonl")) {
    run_dirs.push_back(run_dir);
  } else {
    for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
      if (entry.is_directory() && std::filesystem::exists(entry.path() / "transcripts.jsonl")) {
        run_dirs.push_back(entry.path());
      }
    }
    std::sort(run_dirs.begin(), run_dirs.end());
  }
  if (run_dirs.empty()) {
    throw DataError("no transcripts.jsonl found under: " + run_dir.string());
  }

  EvaluationReport report;
  if (strict) {
    report.notes.push_back("strict mode: unparseable decisions counted as wrong");
  }
  for (const auto& dir : run_dirs) {
    ScoredRun scored = score_one(dir, positive_class, strict);
    report.rows.push_back(std::move(scored.row));
    for (auto& note : scored.notes) report.notes.push_back(std::move(note));
  }
  return report;
}

namespace {

std::string cell(const std::optional<double>& fraction) {
  return fraction ? format_pct(*fraction) : std::string("—");
}

std::string delta_cell(const std::optional<double>& a, const std::optional<double>& b) {
  if (!a || !b) return "—";
  const double pp = (*b - *a) * 100.0;
  std::string s = format_fixed(pp, 2) + " pp";
  if (pp > 0) s = "+" + s;
  return s;
}

}  // namespace

std::string report_markdown(const EvaluationReport& report, bool with_delta) {
  std::ostringstream out;
  out << "| Evaluation | Accuracy | Precision | Recall | F1 Score | Unscored |\n";
  out << "|---|---:|---:|---:|---:|---:|\n";
  for (const RunRow& row : report.rows) {
    out << "| " << row.name << " | " << cell(row.metrics.accuracy) << " | "
        << cell(row.metrics.precision) << " | " << cell(row.metrics.recall) << " | "
        << cell(row.metrics.f1) << " | " << row.unscored << " |\n";
  }

  if (with_delta && report.rows.size() == 2) {
    const Metrics& a = report.rows[0].metrics;
    const Metrics& b = report.rows[1].metrics;
    out << "\n| Delta (" << report.rows[1].name << " vs " << report.rows[0].name
        << ") | Accuracy | Precision | Recall | F1 Score |\n";
    out << "|---|---:|---:|---:|---:|\n";
    out << "| change | " << delta_cell(a.accuracy, b.accuracy) << " | "
        << delta_cell(a.precision, b.precision) << " | " << delta_cell(a.recall, b.recall)
        << " | " << delta_cell(a.f1, b.f1) << " |\n";
  }

  out << "\nProvenance:\n";
  for (const RunRow& row : report.rows) {
    out << "- " << row.name << ": scored " << row.scored << ", unscored " << row.unscored
        << ", unlabeled " << row.unlabeled;
    if (!row.dataset_sha256.empty()) out << ", dataset sha256 " << row.dataset_sha256;
    if (!row.prompts_digest.empty()) out << ", prompts digest " << row.prompts_digest;
    out << "\n";
  }
  for (const std::string& note : report.notes) {
    out << "- note: " << note << "\n";
  }
  return out.str();
}

std::string report_csv(const EvaluationReport& report) {
  std::ostringstream out;
  out << "name,accuracy,precision,recall,f1,unscored\n";
  auto csv_cell = [](const std::optional<double>& fraction) {
    return fraction ? format_fixed(*fraction * 100.0, 2) : std::string();
  };
  for (const RunRow& row : report.rows) {
    out << row.name << "," << csv_cell(row.metrics.accuracy) << ","
        << csv_cell(row.metrics.precision) << "," << csv_cell(row.metrics.recall) << ","
        << csv_cell(row.metrics.f1) << "," << row.unscored << "\n";
  }
  return out.str();
}

std::string confusion_json(const EvaluationReport& report) {
  ordered_json doc = ordered_json::array();
  for (const RunRow& row : report.rows) {
    doc.push_back({{"name", row.name},
                   {"positive_class", to_string(row.matrix.positive_class)},
                   {"tp", row.matrix.tp},
                   {"fp", row.matrix.fp},
                   {"fn", row.matrix.fn},
                   {"tn", row.matrix.tn},
                   {"scored", row.scored},
                   {"unscored", row.unscored},
                   {"unlabeled", row.unlabeled}});
  }
  return doc.dump(2) + "\n";
}

void write_evaluation(const EvaluationReport& report, const std::filesystem::path& out_dir,
                      bool with_delta) {
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "report.md", report_markdown(report, with_delta));
  write_file_atomic(out_dir / "report.csv", report_csv(report));
  write_file_atomic(out_dir / "confusion.json", confusion_json(report));
}

}  // namespace masca
