#include "masca/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <memory>
#include <sstream>

#include "masca/bias.hpp"
#include "masca/evaluation.hpp"
#include "masca/util.hpp"
#include "masca/version.hpp"

namespace masca {

using json = nlohmann::json;

namespace {

std::string run_id_of(const std::filesystem::path& out_dir) {
  auto normal = out_dir.lexically_normal();
  std::string name = normal.filename().string();
  if (name.empty() || name == ".") {
    name = normal.parent_path().filename().string();
  }
  return name.empty() ? normal.string() : name;
}

std::string sanitize_dir_name(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  }
  return out;
}

struct LoadedRun {
  AttributeSchema schema;
  BucketTable buckets;
  AgentCatalog catalog;
  std::vector<ApplicantRecord> records;
  std::string dataset_sha256;
  RunOptions options;
  std::unique_ptr<ChatBackend> backend;
  std::unique_ptr<ResponseCache> cache;
};

json settings_echo(const RunSettings& s) {
  json echo;
  echo["dataset"] = {{"path", s.dataset}, {"format", s.format}};
  echo["schema"] = s.schema.empty() ? "builtin" : s.schema;
  echo["topology"] = s.topology;
  echo["model"] = s.model;
  if (!s.orchestrator_model.empty()) echo["orchestrator_model"] = s.orchestrator_model;
  if (!s.model_map.empty()) echo["model_map"] = s.model_map;
  // Credentials are an env var name only; the value never reaches disk.
  echo["backend"] = {{"kind", s.backend_kind},
                     {"api_key_env", s.api_key_env},
                     {"timeout_s", s.timeout_s},
                     {"max_attempts", s.max_attempts}};
  if (!s.script.empty()) echo["backend"]["script"] = s.script;
  if (!s.endpoint.empty()) echo["backend"]["endpoint"] = s.endpoint;
  echo["thresholds"] = {{"ratio_tau", s.tau}, {"posterior_star", s.posterior_star},
                        {"prior", s.prior}};
  if (!s.belief_weights.empty()) echo["belief_weights"] = s.belief_weights;
  echo["aggregate_weights"] = {{"risk", s.aggregate_weights.risk},
                               {"stability", s.aggregate_weights.stability},
                               {"feasibility", s.aggregate_weights.feasibility}};
  echo["temperature"] = s.temperature;
  echo["max_tokens"] = s.max_tokens;
  echo["concurrency"] = s.concurrency;
  echo["cache"] = s.cache;
  if (!s.scenario.empty()) echo["scenario"] = s.scenario;
  if (!s.bucket_table.empty()) echo["bucket_table"] = s.bucket_table;
  if (!s.agent_catalog.empty()) echo["agent_catalog"] = s.agent_catalog;
  if (s.income_proxy) echo["income_proxy"] = *s.income_proxy;
  return echo;
}

LoadedRun prepare_run(const RunSettings& settings) {
  LoadedRun run;
  run.schema = settings.schema.empty() ? AttributeSchema::builtin()
                                       : AttributeSchema::from_file(settings.schema);
  run.buckets = settings.bucket_table.empty() ? BucketTable::builtin()
                                              : BucketTable::from_file(settings.bucket_table);
  run.catalog = settings.agent_catalog.empty() ? AgentCatalog::builtin()
                                               : AgentCatalog::from_file(settings.agent_catalog);

  run.dataset_sha256 = sha256_hex(read_file(settings.dataset));
  run.records = load_dataset(settings.dataset, run.schema,
                             dataset_format_from_string(settings.format));
  if (!settings.scenario.empty()) {
    const Scenario scenario = Scenario::from_file(settings.scenario);
    std::vector<ApplicantRecord> perturbed;
    perturbed.reserve(run.records.size());
    for (const ApplicantRecord& record : run.records) {
      perturbed.push_back(perturb_scenario(record, scenario, run.schema));
    }
    run.records = std::move(perturbed);
  }

  Topology topology;
  topology.kind = topology_kind_from_string(settings.topology);
  topology.default_model = settings.model;
  if (!settings.orchestrator_model.empty()) {
    topology.model_map[AgentRole::decision_orchestrator] = settings.orchestrator_model;
  }
  for (const auto& [role, model] : settings.model_map) {
    topology.model_map[agent_role_from_string(role)] = model;
  }

  run.options.topology = std::move(topology);
  run.options.thresholds = {settings.tau, settings.posterior_star};
  run.options.belief_prior = settings.prior;
  run.options.belief_weights = settings.belief_weights;
  run.options.aggregate_weights = settings.aggregate_weights;
  run.options.temperature = settings.temperature;
  run.options.max_tokens = settings.max_tokens;
  if (settings.income_proxy) {
    const double estimate = *settings.income_proxy;
    run.options.income = [estimate](const ApplicantRecord&) {
      return Quantity::of(estimate, "configured estimate");
    };
  }

  if (settings.backend_kind == "scripted") {
    run.backend = std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(settings.script));
  } else {
    LiveBackendConfig config;
    config.endpoint = settings.endpoint;
    config.api_key_env = settings.api_key_env;
    config.timeout_s = settings.timeout_s;
    config.max_attempts = settings.max_attempts;
    run.backend = std::make_unique<LiveBackend>(config);
  }
  return run;
}

json build_meta(const RunSettings& settings, const LoadedRun& run, const std::string& run_id) {
  json meta;
  meta["engine"] = kEngineVersion;
  meta["run_id"] = run_id;
  meta["seed"] = settings.seed;
  meta["config"] = settings_echo(settings);
  meta["dataset"] = {{"path", settings.dataset},
                     {"format", settings.format},
                     {"sha256", run.dataset_sha256},
                     {"records", run.records.size()}};
  meta["prompts"] = run.catalog.prompt_checksums();
  return meta;
}

/// Runs one configured dataset pass into out_dir; records can be overridden
/// (bias probes pass modified copies). Returns 0 or 2.
int execute_run(const RunSettings& settings, LoadedRun& run,
                const std::vector<ApplicantRecord>& records,
                const std::filesystem::path& out_dir) {
  run.options.schema = &run.schema;
  run.options.buckets = &run.buckets;
  run.options.catalog = &run.catalog;

  std::filesystem::create_directories(out_dir);
  if (settings.cache) {
    run.cache = std::make_unique<ResponseCache>(out_dir / "cache");
  } else {
    run.cache.reset();
  }
  CompletionService service(*run.backend, run.cache.get(), settings.concurrency);

  const std::string run_id = run_id_of(out_dir);
  const json meta = build_meta(settings, run, run_id);
  RunResult result =
      run_dataset(records, run.options, service, out_dir, meta, settings.concurrency,
                  settings.resume);
  std::cout << "run " << run_id << ": completed " << result.completed << ", skipped "
            << result.skipped << ", failed " << result.failed << "\n";
  if (result.failed > 0) {
    std::cerr << "error: " << result.first_error << "\n";
    return 2;
  }
  return 0;
}

int cmd_run(const RunSettings& settings) {
  LoadedRun run = prepare_run(settings);
  return execute_run(settings, run, run.records, settings.out);
}

int cmd_eval(const std::string& run_dir, const std::string& positive, bool strict,
             std::string out_dir) {
  EvaluationReport report =
      evaluate_run(run_dir, credit_label_from_string(positive), strict);
  if (out_dir.empty()) {
    out_dir = (std::filesystem::path(run_dir) / "eval").string();
  }
  write_evaluation(report, out_dir);
  std::cout << report_markdown(report);
  return 0;
}

int cmd_ablate(RunSettings settings, const std::vector<std::string>& topologies,
               const std::string& positive) {
  const std::filesystem::path root = settings.out;
  int worst = 0;
  for (const std::string& topology : topologies) {
    RunSettings sub = settings;
    sub.topology = topology;
    sub.out = (root / topology).string();
    LoadedRun run = prepare_run(sub);
    worst = std::max(worst, execute_run(sub, run, run.records, sub.out));
  }
  EvaluationReport report = evaluate_run(root, credit_label_from_string(positive), false);
  write_file_atomic(root / "ablation.md", report_markdown(report));
  write_file_atomic(root / "ablation.csv", report_csv(report));
  std::cout << report_markdown(report);
  return worst;
}

std::vector<Transcript> read_transcripts(const std::filesystem::path& run_dir) {
  std::vector<Transcript> transcripts;
  std::istringstream in(read_file(run_dir / "transcripts.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    transcripts.push_back(transcript_from_jsonl_line(line));
  }
  return transcripts;
}

int cmd_bias_gender(const RunSettings& settings, const std::string& mapping_path) {
  const GenderMapping mapping = mapping_path.empty() ? GenderMapping::builtin()
                                                     : GenderMapping::from_file(mapping_path);
  LoadedRun run = prepare_run(settings);

  std::vector<ApplicantRecord> base;
  std::vector<ApplicantRecord> variants;
  long non_bijective = 0;
  for (const ApplicantRecord& record : run.records) {
    auto it = record.values.find(mapping.attribute_id());
    if (it == record.values.end()) continue;
    const std::string* code = std::get_if<std::string>(&it->second);
    if (!code || !mapping.has(*code)) continue;
    if (mapping.direction(*code) != "male->female") continue;  // probe male-coded records
    CounterfactualPair pair = swap_gender(record, mapping);
    if (!pair.bijective) ++non_bijective;
    base.push_back(std::move(pair.base));
    variants.push_back(std::move(pair.variant));
  }
  if (base.empty()) {
    throw DataError("no records with a mapped male personal-status code to probe");
  }

  const std::filesystem::path root = settings.out;
  int rc = execute_run(settings, run, base, root / "base");
  rc = std::max(rc, execute_run(settings, run, variants, root / "variant"));

  const auto base_transcripts = read_transcripts(root / "base");
  const auto variant_transcripts = read_transcripts(root / "variant");

  BiasReport report;
  report.probe = "gender";
  report.groups.push_back(score_group("male", base_transcripts, CreditLabel::good));
  report.groups.push_back(score_group("female", variant_transcripts, CreditLabel::good));
  if (non_bijective > 0) {
    report.notes.push_back(std::to_string(non_bijective) +
                           " pair(s) use a non-bijective mapping entry; the swap is not an "
                           "involution for them");
  }

  std::map<std::string, std::optional<CreditLabel>> variant_decisions;
  for (const Transcript& t : variant_transcripts) variant_decisions[t.record_id] = t.decision;
  std::vector<PairedDecision> pairs;
  long incomplete = 0;
  for (const Transcript& t : base_transcripts) {
    auto it = variant_decisions.find(t.record_id);
    if (it == variant_decisions.end()) continue;
    if (!t.decision || !it->second) {
      ++incomplete;
      continue;
    }
    pairs.push_back({t.record_id, t.decision, it->second});
  }
  if (incomplete > 0) {
    report.notes.push_back(std::to_string(incomplete) +
                           " pair(s) excluded from flip analysis: missing a decision");
  }
  report.flips = paired_flip_report(pairs);

  const auto& male = report.groups[0];
  const auto& female = report.groups[1];
  if (male.approval_rate && *male.approval_rate > 0.0 && female.approval_rate) {
    report.disparate_impact_rows.push_back(
        {"female", "male", disparate_impact(*female.approval_rate, *male.approval_rate)});
  } else {
    report.notes.push_back("disparate impact skipped: reference approval rate unavailable");
  }

  write_bias_report(report, root);
  std::cout << bias_report_markdown(report);
  return rc;
}

int cmd_bias_ethnicity(const RunSettings& settings, const std::vector<std::string>& groups) {
  LoadedRun run = prepare_run(settings);
  const std::filesystem::path root = settings.out;

  int rc = execute_run(settings, run, run.records, root / "baseline");

  BiasReport report;
  report.probe = "ethnicity";
  report.groups.push_back(
      score_group("baseline", read_transcripts(root / "baseline"), CreditLabel::good));

  long good_labels = 0;
  long labeled = 0;
  for (const ApplicantRecord& record : run.records) {
    if (!record.label) continue;
    ++labeled;
    if (*record.label == CreditLabel::good) ++good_labels;
  }
  std::optional<double> ground_truth_rate;
  if (labeled > 0) {
    ground_truth_rate = static_cast<double>(good_labels) / static_cast<double>(labeled);
  }

  for (const std::string& group : groups) {
    std::vector<ApplicantRecord> probed;
    probed.reserve(run.records.size());
    for (const ApplicantRecord& record : run.records) {
      probed.push_back(inject_ethnicity(record, group));
    }
    const auto dir = root / sanitize_dir_name(group);
    rc = std::max(rc, execute_run(settings, run, probed, dir));
    GroupRow row = score_group(group, read_transcripts(dir), CreditLabel::good);
    if (row.approval_rate && ground_truth_rate && *ground_truth_rate > 0.0) {
      report.disparate_impact_rows.push_back(
          {group, "ground_truth", disparate_impact(*row.approval_rate, *ground_truth_rate)});
    }
    report.groups.push_back(std::move(row));
  }
  if (ground_truth_rate) {
    report.notes.push_back("ground-truth approval rate: " + format_pct(*ground_truth_rate));
  }

  write_bias_report(report, root);
  std::cout << bias_report_markdown(report);
  return rc;
}

int cmd_bias_redact(const RunSettings& settings, const std::string& attribute) {
  LoadedRun run = prepare_run(settings);
  const std::filesystem::path root = settings.out;

  int rc = execute_run(settings, run, run.records, root / "baseline");

  std::vector<ApplicantRecord> redacted;
  redacted.reserve(run.records.size());
  for (const ApplicantRecord& record : run.records) {
    redacted.push_back(redact_attribute(record, attribute));
  }
  rc = std::max(rc, execute_run(settings, run, redacted, root / "redacted"));

  BiasReport report;
  report.probe = "redact";
  report.groups.push_back(
      score_group("baseline", read_transcripts(root / "baseline"), CreditLabel::good));
  report.groups.push_back(
      score_group("redacted", read_transcripts(root / "redacted"), CreditLabel::good));
  report.notes.push_back("redaction probe: attribute " + attribute +
                         " removed from rendered profiles; this is one interpretation of "
                         "removing the combined status attribute");

  write_bias_report(report, root);
  std::cout << bias_report_markdown(report);
  return rc;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& positive,
               const std::string& out_path) {
  EvaluationReport merged;
  for (const std::string& dir : runs) {
    EvaluationReport one = evaluate_run(dir, credit_label_from_string(positive), false);
    for (auto& row : one.rows) merged.rows.push_back(std::move(row));
    for (auto& note : one.notes) merged.notes.push_back(std::move(note));
  }
  const bool with_delta = merged.rows.size() == 2;
  const std::filesystem::path md_path = out_path;
  if (md_path.has_parent_path()) {
    std::filesystem::create_directories(md_path.parent_path());
  }
  write_file_atomic(md_path, report_markdown(merged, with_delta));
  std::filesystem::path csv_path = md_path;
  csv_path.replace_extension(".csv");
  write_file_atomic(csv_path, report_csv(merged));
  std::cout << report_markdown(merged, with_delta);
  return 0;
}

}  // namespace

RunSettings load_settings_json(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: invalid JSON: ") + ex.what());
  }
  RunSettings s;
  if (doc.contains("dataset")) {
    s.dataset = doc["dataset"].value("path", "");
    s.format = doc["dataset"].value("format", s.format);
  }
  s.schema = doc.value("schema", s.schema);
  s.topology = doc.value("topology", s.topology);
  s.model = doc.value("model", s.model);
  s.orchestrator_model = doc.value("orchestrator_model", s.orchestrator_model);
  if (doc.contains("model_map")) {
    for (const auto& [role, model] : doc["model_map"].items()) {
      s.model_map[role] = model.get<std::string>();
    }
  }
  if (doc.contains("backend")) {
    const auto& b = doc["backend"];
    s.backend_kind = b.value("kind", s.backend_kind);
    s.script = b.value("script", s.script);
    s.endpoint = b.value("endpoint", s.endpoint);
    s.api_key_env = b.value("api_key_env", s.api_key_env);
    s.timeout_s = b.value("timeout_s", s.timeout_s);
    s.max_attempts = b.value("max_attempts", s.max_attempts);
  }
  if (doc.contains("thresholds")) {
    const auto& t = doc["thresholds"];
    s.tau = t.value("ratio_tau", s.tau);
    s.posterior_star = t.value("posterior_star", s.posterior_star);
    s.prior = t.value("prior", s.prior);
  }
  if (doc.contains("belief_weights")) {
    for (const auto& [role, w] : doc["belief_weights"].items()) {
      s.belief_weights[role] = w.get<double>();
    }
  }
  if (doc.contains("aggregate_weights")) {
    const auto& w = doc["aggregate_weights"];
    s.aggregate_weights.risk = w.value("risk", s.aggregate_weights.risk);
    s.aggregate_weights.stability = w.value("stability", s.aggregate_weights.stability);
    s.aggregate_weights.feasibility = w.value("feasibility", s.aggregate_weights.feasibility);
  }
  s.temperature = doc.value("temperature", s.temperature);
  s.max_tokens = doc.value("max_tokens", s.max_tokens);
  s.concurrency = doc.value("concurrency", s.concurrency);
  s.out = doc.value("out", s.out);
  s.seed = doc.value("seed", s.seed);
  s.cache = doc.value("cache", s.cache);
  s.scenario = doc.value("scenario", s.scenario);
  s.bucket_table = doc.value("bucket_table", s.bucket_table);
  s.agent_catalog = doc.value("agent_catalog", s.agent_catalog);
  if (doc.contains("income_proxy") && !doc["income_proxy"].is_null()) {
    s.income_proxy = doc["income_proxy"].get<double>();
  }
  return s;
}

std::vector<std::string> validate_settings(const RunSettings& s, bool require_dataset) {
  std::vector<std::string> violations;
  auto check_path = [&violations](const std::string& path, const std::string& what) {
    if (!path.empty() && !std::filesystem::exists(path)) {
      violations.push_back(what + " does not exist: " + path);
    }
  };

  if (require_dataset) {
    if (s.dataset.empty()) {
      violations.push_back("dataset path is required");
    } else {
      check_path(s.dataset, "dataset");
    }
    if (s.out.empty()) violations.push_back("output directory is required");
  }
  try {
    (void)dataset_format_from_string(s.format);
  } catch (const ConfigError& ex) {
    violations.push_back(ex.what());
  }
  try {
    (void)topology_kind_from_string(s.topology);
  } catch (const ConfigError& ex) {
    violations.push_back(ex.what());
  }
  for (const auto& [role, model] : s.model_map) {
    try {
      (void)agent_role_from_string(role);
    } catch (const ConfigError& ex) {
      violations.push_back(ex.what());
    }
    if (model.empty()) violations.push_back("model_map entry for " + role + " is empty");
  }
  if (s.backend_kind == "scripted") {
    if (s.script.empty()) {
      violations.push_back("scripted backend requires a script path");
    } else {
      check_path(s.script, "script");
    }
  } else if (s.backend_kind == "live") {
    if (s.endpoint.empty()) violations.push_back("live backend requires an endpoint URL");
    if (s.api_key_env.empty()) violations.push_back("live backend requires an api_key_env name");
  } else {
    violations.push_back("unknown backend kind \"" + s.backend_kind +
                         "\" (expected scripted or live)");
  }
  check_path(s.schema, "schema");
  check_path(s.scenario, "scenario");
  check_path(s.bucket_table, "bucket table");
  check_path(s.agent_catalog, "agent catalog");

  if (!(s.tau >= 0.0)) violations.push_back("ratio_tau must be >= 0");
  if (!(s.posterior_star > 0.0 && s.posterior_star < 1.0)) {
    violations.push_back("posterior_star must be in (0,1)");
  }
  if (!(s.prior > 0.0 && s.prior < 1.0)) violations.push_back("prior must be in (0,1)");
  if (!(s.temperature >= 0.0 && s.temperature <= 2.0)) {
    violations.push_back("temperature must be in [0,2]");
  }
  if (s.max_tokens <= 0) violations.push_back("max_tokens must be positive");
  if (s.concurrency < 1) violations.push_back("concurrency must be >= 1");
  if (s.timeout_s < 1) violations.push_back("timeout_s must be >= 1");
  if (s.max_attempts < 1) violations.push_back("max_attempts must be >= 1");
  for (const auto& [role, w] : s.belief_weights) {
    if (!(w >= 0.0)) violations.push_back("belief weight for " + role + " must be >= 0");
  }
  if (!(s.aggregate_weights.risk >= 0.0 && s.aggregate_weights.stability >= 0.0 &&
        s.aggregate_weights.feasibility >= 0.0)) {
    violations.push_back("aggregate weights must be >= 0");
  }
  if (s.income_proxy && !(*s.income_proxy >= 0.0)) {
    violations.push_back("income_proxy must be >= 0");
  }
  return violations;
}

namespace {

/// Binds the shared run flags onto a subcommand; returns a closure that
/// merges config file + flags (flags win) into a RunSettings.
std::function<RunSettings()> bind_run_flags(CLI::App* cmd) {
  struct Bound {
    std::string config;
    RunSettings flags;
    double income_proxy = 0.0;
    CLI::App* cmd;
  };
  auto bound = std::make_shared<Bound>();
  bound->cmd = cmd;

  cmd->add_option("--config", bound->config, "JSON config file; flags override its values");
  cmd->add_option("--dataset", bound->flags.dataset, "dataset file");
  cmd->add_option("--format", bound->flags.format, "jsonl | statlog");
  cmd->add_option("--schema", bound->flags.schema, "schema file (default: bundled)");
  cmd->add_option("--topology", bound->flags.topology,
                  "hierarchical3 | two_level | flat | single_agent_multitask | zero_shot | cot");
  cmd->add_option("--model", bound->flags.model, "default model id");
  cmd->add_option("--orchestrator-model", bound->flags.orchestrator_model,
                  "model id override for the decision orchestrator");
  cmd->add_option("--backend", bound->flags.backend_kind, "scripted | live");
  cmd->add_option("--script", bound->flags.script, "scripted backend response file");
  cmd->add_option("--endpoint", bound->flags.endpoint, "live chat-completions URL");
  cmd->add_option("--api-key-env", bound->flags.api_key_env,
                  "environment variable holding the API key");
  cmd->add_option("--timeout-s", bound->flags.timeout_s, "request timeout in seconds");
  cmd->add_option("--max-attempts", bound->flags.max_attempts, "retry budget per request");
  cmd->add_option("--temperature", bound->flags.temperature, "sampling temperature");
  cmd->add_option("--max-tokens", bound->flags.max_tokens, "completion token cap");
  cmd->add_option("--tau", bound->flags.tau, "risk-reward ratio threshold");
  cmd->add_option("--posterior-star", bound->flags.posterior_star,
                  "posterior default-risk threshold");
  cmd->add_option("--prior", bound->flags.prior, "belief prior default probability");
  cmd->add_option("--concurrency", bound->flags.concurrency, "parallel records / in-flight cap");
  cmd->add_option("--out", bound->flags.out, "output directory");
  cmd->add_option("--seed", bound->flags.seed, "seed text recorded in run metadata");
  cmd->add_flag("--no-cache", "disable the response cache");
  cmd->add_flag("--resume", bound->flags.resume, "keep existing transcripts, run the rest");
  cmd->add_option("--scenario", bound->flags.scenario, "scenario perturbation file");
  cmd->add_option("--bucket-table", bound->flags.bucket_table, "bucket midpoint file");
  cmd->add_option("--agent-catalog", bound->flags.agent_catalog, "agent catalog file");
  cmd->add_option("--income-proxy", bound->income_proxy,
                  "constant disposable-income estimate for ratio computation");

  return [bound]() {
    RunSettings merged;
    if (!bound->config.empty()) {
      merged = load_settings_json(bound->config);
    }
    CLI::App* cmd = bound->cmd;
    auto passed = [cmd](const std::string& name) { return cmd->count(name) > 0; };
    const RunSettings& f = bound->flags;
    if (passed("--dataset")) merged.dataset = f.dataset;
    if (passed("--format")) merged.format = f.format;
    if (passed("--schema")) merged.schema = f.schema;
    if (passed("--topology")) merged.topology = f.topology;
    if (passed("--model")) merged.model = f.model;
    if (passed("--orchestrator-model")) merged.orchestrator_model = f.orchestrator_model;
    if (passed("--backend")) merged.backend_kind = f.backend_kind;
    if (passed("--script")) merged.script = f.script;
    if (passed("--endpoint")) merged.endpoint = f.endpoint;
    if (passed("--api-key-env")) merged.api_key_env = f.api_key_env;
    if (passed("--timeout-s")) merged.timeout_s = f.timeout_s;
    if (passed("--max-attempts")) merged.max_attempts = f.max_attempts;
    if (passed("--temperature")) merged.temperature = f.temperature;
    if (passed("--max-tokens")) merged.max_tokens = f.max_tokens;
    if (passed("--tau")) merged.tau = f.tau;
    if (passed("--posterior-star")) merged.posterior_star = f.posterior_star;
    if (passed("--prior")) merged.prior = f.prior;
    if (passed("--concurrency")) merged.concurrency = f.concurrency;
    if (passed("--out")) merged.out = f.out;
    if (passed("--seed")) merged.seed = f.seed;
    if (passed("--no-cache")) merged.cache = false;
    if (passed("--resume")) merged.resume = f.resume;
    if (passed("--scenario")) merged.scenario = f.scenario;
    if (passed("--bucket-table")) merged.bucket_table = f.bucket_table;
    if (passed("--agent-catalog")) merged.agent_catalog = f.agent_catalog;
    if (passed("--income-proxy")) merged.income_proxy = bound->income_proxy;
    return merged;
  };
}

int report_violations(const std::vector<std::string>& violations) {
  std::cerr << "invalid configuration (" << violations.size() << " problem(s)):\n";
  for (const std::string& v : violations) {
    std::cerr << "  - " << v << "\n";
  }
  return 1;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"MASCA credit-assessment engine"};
  app.require_subcommand(1);

  CLI::App* run_cmd = app.add_subcommand("run", "execute a topology over a dataset");
  auto run_settings = bind_run_flags(run_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "score a run against ground truth");
  std::string eval_run;
  std::string eval_positive = "good";
  bool eval_strict = false;
  std::string eval_out;
  eval_cmd->add_option("--run", eval_run, "run directory")->required();
  eval_cmd->add_option("--positive", eval_positive, "positive class (good | bad)");
  eval_cmd->add_flag("--strict", eval_strict, "count unparseable decisions as wrong");
  eval_cmd->add_option("--out", eval_out, "report directory (default <run>/eval)");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "sweep topologies and compare");
  auto ablate_settings = bind_run_flags(ablate_cmd);
  std::string ablate_topologies = "flat,two_level,hierarchical3";
  std::string ablate_positive = "good";
  ablate_cmd->add_option("--topologies", ablate_topologies, "comma-separated topology list");
  ablate_cmd->add_option("--positive", ablate_positive, "positive class (good | bad)");

  CLI::App* bias_cmd = app.add_subcommand("bias", "counterfactual fairness probes");
  bias_cmd->require_subcommand(1);
  CLI::App* gender_cmd = bias_cmd->add_subcommand("gender", "male->female swap probe");
  auto gender_settings = bind_run_flags(gender_cmd);
  std::string gender_mapping;
  gender_cmd->add_option("--mapping", gender_mapping, "gender mapping file (default: builtin)");
  CLI::App* ethnicity_cmd = bias_cmd->add_subcommand("ethnicity", "ethnicity injection probe");
  auto ethnicity_settings = bind_run_flags(ethnicity_cmd);
  std::string ethnicity_groups = "African/Black,Asian";
  ethnicity_cmd->add_option("--groups", ethnicity_groups, "comma-separated group list");
  CLI::App* redact_cmd = bias_cmd->add_subcommand("redact", "attribute redaction probe");
  auto redact_settings = bind_run_flags(redact_cmd);
  std::string redact_attribute_id = "X9";
  redact_cmd->add_option("--attribute", redact_attribute_id, "attribute id to redact");

  CLI::App* report_cmd = app.add_subcommand("report", "merge runs into one comparison table");
  std::vector<std::string> report_runs;
  std::string report_positive = "good";
  std::string report_out = "report.md";
  report_cmd->add_option("--runs", report_runs, "run directories")->required()->expected(-1);
  report_cmd->add_option("--positive", report_positive, "positive class (good | bad)");
  report_cmd->add_option("--out", report_out, "markdown output path (csv written alongside)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (run_cmd->parsed()) {
      RunSettings settings = run_settings();
      const auto violations = validate_settings(settings, true);
      if (!violations.empty()) return report_violations(violations);
      return cmd_run(settings);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_run, eval_positive, eval_strict, eval_out);
    }
    if (ablate_cmd->parsed()) {
      RunSettings settings = ablate_settings();
      const auto violations = validate_settings(settings, true);
      if (!violations.empty()) return report_violations(violations);
      std::vector<std::string> topologies;
      for (const std::string& t : split(ablate_topologies, ',')) {
        if (!trim(t).empty()) topologies.push_back(trim(t));
      }
      for (const std::string& t : topologies) {
        try {
          (void)topology_kind_from_string(t);
        } catch (const ConfigError& ex) {
          return report_violations({ex.what()});
        }
      }
      return cmd_ablate(settings, topologies, ablate_positive);
    }
    if (gender_cmd->parsed()) {
      RunSettings settings = gender_settings();
      auto violations = validate_settings(settings, true);
      if (!gender_mapping.empty() && !std::filesystem::exists(gender_mapping)) {
        violations.push_back("gender mapping does not exist: " + gender_mapping);
      }
      if (!violations.empty()) return report_violations(violations);
      return cmd_bias_gender(settings, gender_mapping);
    }
    if (ethnicity_cmd->parsed()) {
      RunSettings settings = ethnicity_settings();
      const auto violations = validate_settings(settings, true);
      if (!violations.empty()) return report_violations(violations);
      std::vector<std::string> groups;
      for (const std::string& g : split(ethnicity_groups, ',')) {
        if (!trim(g).empty()) groups.push_back(trim(g));
      }
      if (groups.empty()) return report_violations({"ethnicity probe needs at least one group"});
      return cmd_bias_ethnicity(settings, groups);
    }
    if (redact_cmd->parsed()) {
      RunSettings settings = redact_settings();
      const auto violations = validate_settings(settings, true);
      if (!violations.empty()) return report_violations(violations);
      return cmd_bias_redact(settings, redact_attribute_id);
    }
    if (report_cmd->parsed()) {
      return cmd_report(report_runs, report_positive, report_out);
    }
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace masca
