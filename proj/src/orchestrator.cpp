#include "masca/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <sstream>

#include "masca/util.hpp"

namespace masca {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::hierarchical3: return "hierarchical3";
    case TopologyKind::two_level: return "two_level";
    case TopologyKind::flat: return "flat";
    case TopologyKind::single_agent_multitask: return "single_agent_multitask";
    case TopologyKind::zero_shot: return "zero_shot";
    case TopologyKind::cot: return "cot";
  }
  throw MascaError("unknown topology kind");
}

TopologyKind topology_kind_from_string(const std::string& s) {
  for (TopologyKind kind :
       {TopologyKind::hierarchical3, TopologyKind::two_level, TopologyKind::flat,
        TopologyKind::single_agent_multitask, TopologyKind::zero_shot, TopologyKind::cot}) {
    if (s == to_string(kind)) return kind;
  }
  throw ConfigError("unknown topology \"" + s + "\"");
}

std::string Topology::model_for(AgentRole role) const {
  auto it = model_map.find(role);
  return it != model_map.end() ? it->second : default_model;
}

namespace {

constexpr double kSignalClamp = 1e-6;
constexpr double kRewardFloor = 1e-6;

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clamp_signal(double s) {
  return std::min(std::max(s, kSignalClamp), 1.0 - kSignalClamp);
}

}  // namespace

double BeliefState::posterior() const {
  double log_odds = logit(std::min(std::max(prior, kSignalClamp), 1.0 - kSignalClamp));
  for (const BeliefObservation& obs : observations) {
    log_odds += obs.weight * logit(clamp_signal(obs.signal));
  }
  return sigmoid(log_odds);
}

BeliefState update_belief(BeliefState b, const std::string& role, double signal, double weight) {
  if (!(signal >= 0.0 && signal <= 1.0)) {
    throw MascaError("belief signal must be in [0,1], got " + std::to_string(signal));
  }
  if (!(weight >= 0.0)) {
    throw MascaError("belief weight must be non-negative, got " + std::to_string(weight));
  }
  b.observations.push_back({role, signal, weight});
  return b;
}

RiskRewardAggregate aggregate_risk_reward(const std::vector<AgentOutput>& layer2_outputs,
                                          const AggregateWeights& weights) {
  RiskRewardAggregate result;
  double weighted_sum = 0.0;
  double weight_total = 0.0;
  std::optional<double> reward;

  for (const AgentOutput& out : layer2_outputs) {
    if (!out.valid) continue;
    switch (out.role) {
      case AgentRole::risk_modeler: {
        const double s = out.scores.at("risk_score");
        weighted_sum += weights.risk * s;
        weight_total += weights.risk;
        result.components["risk_score"] = s;
        break;
      }
      case AgentRole::income_stability_analyst: {
        const double s = 1.0 - out.scores.at("income_stability_score");
        weighted_sum += weights.stability * s;
        weight_total += weights.stability;
        result.components["income_instability"] = s;
        break;
      }
      case AgentRole::debt_analyst: {
        const double s = 1.0 - out.scores.at("loan_feasibility_score");
        weighted_sum += weights.feasibility * s;
        weight_total += weights.feasibility;
        result.components["loan_infeasibility"] = s;
        break;
      }
      case AgentRole::reward_modeler:
        reward = out.scores.at("overall_reward_score");
        result.components["overall_reward_score"] = *reward;
        break;
      default:
        break;
    }
  }

  if (weight_total <= 0.0 && !reward) {
    throw MascaError("aggregate_risk_reward: no valid scores on either side");
  }
  if (weight_total <= 0.0) {
    throw MascaError("aggregate_risk_reward: no valid risk-side scores");
  }
  if (!reward) {
    throw MascaError("aggregate_risk_reward: no valid reward-side score");
  }

  result.aggregate_risk = weighted_sum / weight_total;
  result.reward = *reward;
  result.reward_floor_applied = *reward < kRewardFloor;
  result.ratio = result.aggregate_risk / std::max(*reward, kRewardFloor);
  return result;
}

DeterministicDecision decide_deterministic(std::optional<double> ratio, double posterior,
                                           const Thresholds& thresholds) {
  DeterministicDecision decision;
  const bool ratio_ok = ratio.has_value() && *ratio <= thresholds.ratio_tau;
  const bool posterior_ok = posterior <= thresholds.posterior_star;
  decision.label = (ratio_ok && posterior_ok) ? CreditLabel::good : CreditLabel::bad;
  double raw = std::abs(posterior - thresholds.posterior_star);
  if (ratio.has_value()) {
    raw += std::abs(*ratio - thresholds.ratio_tau);
  }
  decision.confidence = std::min(raw, 1.0);
  return decision;
}

Scenario Scenario::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("scenario: invalid JSON: ") + ex.what());
  }
  Scenario scenario;
  scenario.shock_name = doc.at("shock_name").get<std::string>();
  for (const auto& [id, factor] : doc.at("multipliers").items()) {
    scenario.multipliers[id] = factor.get<double>();
  }
  return scenario;
}

Scenario Scenario::from_file(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

ApplicantRecord perturb_scenario(const ApplicantRecord& record, const Scenario& scenario,
                                 const AttributeSchema& schema) {
  for (const auto& [id, factor] : scenario.multipliers) {
    const Attribute* attr = schema.find(id);
    if (!attr) {
      throw DataError("scenario targets unknown attribute " + id);
    }
    if (attr->kind != AttributeKind::numerical) {
      throw DataError("scenario multiplier on categorical attribute " + id);
    }
    if (!(factor > 0.0)) {
      throw DataError("scenario multiplier for " + id + " must be positive");
    }
  }
  ApplicantRecord out = record;
  out.id = record.id + "#" + scenario.shock_name;
  for (const auto& [id, factor] : scenario.multipliers) {
    auto it = out.values.find(id);
    if (it == out.values.end()) continue;
    const double scaled = std::get<double>(it->second) * factor;
    it->second = static_cast<double>(std::llround(scaled));
  }
  return out;
}

namespace {

ordered_json agent_to_json(const AgentOutput& out) {
  ordered_json j;
  j["role"] = to_string(out.role);
  j["model_id"] = out.model_id;
  j["raw_text"] = out.raw_text;
  j["payload"] = out.payload;
  j["scores"] = out.scores;
  j["valid"] = out.valid;
  j["violations"] = out.violations;
  j["attempts"] = out.attempts;
  j["usage"] = {{"prompt_tokens", out.usage.prompt_tokens},
                {"completion_tokens", out.usage.completion_tokens}};
  j["latency_ms"] = out.latency_ms;
  j["json_multiplicity"] = out.json_multiplicity;
  return j;
}

AgentOutput agent_from_json(const json& j) {
  AgentOutput out;
  out.role = agent_role_from_string(j.at("role").get<std::string>());
  out.model_id = j.value("model_id", "");
  out.raw_text = j.value("raw_text", "");
  out.payload = j.value("payload", json(nullptr));
  if (j.contains("scores")) {
    for (const auto& [k, v] : j["scores"].items()) out.scores[k] = v.get<double>();
  }
  out.valid = j.value("valid", false);
  if (j.contains("violations")) {
    for (const auto& v : j["violations"]) out.violations.push_back(v.get<std::string>());
  }
  out.attempts = j.value("attempts", 1);
  if (j.contains("usage")) {
    out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
    out.usage.completion_tokens = j["usage"].value("completion_tokens", 0L);
  }
  out.latency_ms = j.value("latency_ms", 0.0);
  out.json_multiplicity = j.value("json_multiplicity", false);
  return out;
}

}  // namespace

std::string transcript_to_jsonl_line(const Transcript& t) {
  ordered_json j;
  j["record_id"] = t.record_id;
  j["topology"] = t.topology;
  j["label"] = t.label ? json(to_string(*t.label)) : json(nullptr);

  ordered_json agents = ordered_json::array();
  for (const AgentOutput& out : t.agents) agents.push_back(agent_to_json(out));
  j["agents"] = std::move(agents);

  ordered_json baseline = ordered_json::array();
  for (const BaselineCall& call : t.baseline_calls) {
    baseline.push_back({{"tag", call.tag},
                        {"raw_text", call.raw_text},
                        {"usage",
                         {{"prompt_tokens", call.usage.prompt_tokens},
                          {"completion_tokens", call.usage.completion_tokens}}},
                        {"latency_ms", call.latency_ms}});
  }
  j["baseline_calls"] = std::move(baseline);

  ordered_json belief;
  belief["prior"] = t.belief.prior;
  ordered_json observations = ordered_json::array();
  BeliefState partial;
  partial.prior = t.belief.prior;
  for (const BeliefObservation& obs : t.belief.observations) {
    partial.observations.push_back(obs);
    observations.push_back({{"role", obs.role},
                            {"signal", obs.signal},
                            {"weight", obs.weight},
                            {"posterior_after", partial.posterior()}});
  }
  belief["observations"] = std::move(observations);
  belief["posterior"] = t.belief.posterior();
  j["belief"] = std::move(belief);

  j["risk_reward"] = {{"ratio", t.risk_reward_ratio ? json(*t.risk_reward_ratio) : json(nullptr)},
                      {"source", t.risk_reward_source}};
  j["decision"] = t.decision ? json(to_string(*t.decision)) : json(nullptr);
  j["decision_source"] = t.decision_source;
  j["confidence"] = t.confidence ? json(*t.confidence) : json(nullptr);
  j["notes"] = t.notes;
  return j.dump();
}

Transcript transcript_from_jsonl_line(const std::string& line) {
  json j = json::parse(line);
  Transcript t;
  t.record_id = j.at("record_id").get<std::string>();
  t.topology = j.value("topology", "");
  if (j.contains("label") && !j["label"].is_null()) {
    t.label = credit_label_from_string(j["label"].get<std::string>());
  }
  if (j.contains("agents")) {
    for (const auto& a : j["agents"]) t.agents.push_back(agent_from_json(a));
  }
  if (j.contains("baseline_calls")) {
    for (const auto& b : j["baseline_calls"]) {
      BaselineCall call;
      call.tag = b.value("tag", "");
      call.raw_text = b.value("raw_text", "");
      if (b.contains("usage")) {
        call.usage.prompt_tokens = b["usage"].value("prompt_tokens", 0L);
        call.usage.completion_tokens = b["usage"].value("completion_tokens", 0L);
      }
      call.latency_ms = b.value("latency_ms", 0.0);
      t.baseline_calls.push_back(std::move(call));
    }
  }
  if (j.contains("belief")) {
    t.belief.prior = j["belief"].value("prior", 0.3);
    if (j["belief"].contains("observations")) {
      for (const auto& o : j["belief"]["observations"]) {
        t.belief.observations.push_back(
            {o.at("role").get<std::string>(), o.at("signal").get<double>(),
             o.at("weight").get<double>()});
      }
    }
  }
  if (j.contains("risk_reward")) {
    if (!j["risk_reward"]["ratio"].is_null()) {
      t.risk_reward_ratio = j["risk_reward"]["ratio"].get<double>();
    }
    t.risk_reward_source = j["risk_reward"].value("source", "none");
  }
  if (j.contains("decision") && !j["decision"].is_null()) {
    t.decision = credit_label_from_string(j["decision"].get<std::string>());
  }
  t.decision_source = j.value("decision_source", "none");
  if (j.contains("confidence") && !j["confidence"].is_null()) {
    t.confidence = j["confidence"].get<double>();
  }
  if (j.contains("notes")) {
    for (const auto& n : j["notes"]) t.notes.push_back(n.get<std::string>());
  }
  return t;
}

namespace {

enum class SelectorMode {
  normal,
  raw_profile_only,   // flat ablation: every agent sees just the raw profile
  without_optimizer,  // two_level: the optimizer artifact never exists
};

/// Runs one layer group concurrently; outputs come back in the group's
/// canonical order regardless of scheduling.
std::vector<AgentOutput> run_layer(const std::vector<AgentRole>& roles, const RunOptions& options,
                                   const std::map<std::string, std::string>& context,
                                   CompletionService& service, SelectorMode mode) {
  std::vector<std::future<AgentOutput>> futures;
  futures.reserve(roles.size());
  for (AgentRole role : roles) {
    AgentSpec spec = options.catalog->spec(role);
    if (mode == SelectorMode::raw_profile_only) {
      spec.input_selector = {"raw_profile"};
    } else if (mode == SelectorMode::without_optimizer) {
      std::erase(spec.input_selector, std::string("risk_reward_analysis"));
    }
    if (spec.model_id.empty()) {
      spec.model_id = options.topology.model_for(role);
    }
    futures.push_back(std::async(std::launch::async, [spec, &context, &service, &options] {
      return run_agent(spec, context, service, options.temperature, options.max_tokens);
    }));
  }
  std::vector<AgentOutput> outputs;
  outputs.reserve(roles.size());
  for (auto& f : futures) outputs.push_back(f.get());
  return outputs;
}

double belief_weight(const RunOptions& options, AgentRole role) {
  auto it = options.belief_weights.find(to_string(role));
  return it != options.belief_weights.end() ? it->second : 1.0;
}

/// Default-risk signal per the orientation convention: risk_score directly,
/// one minus the score for stability, feasibility and reward.
std::optional<double> default_risk_signal(const AgentOutput& out) {
  if (!out.valid) return std::nullopt;
  switch (out.role) {
    case AgentRole::risk_modeler:
      return out.scores.at("risk_score");
    case AgentRole::income_stability_analyst:
      return 1.0 - out.scores.at("income_stability_score");
    case AgentRole::debt_analyst:
      return 1.0 - out.scores.at("loan_feasibility_score");
    case AgentRole::reward_modeler:
      return 1.0 - out.scores.at("overall_reward_score");
    default:
      return std::nullopt;
  }
}

Transcript run_baseline(const ApplicantRecord& record, const RunOptions& options,
                        CompletionService& service, const std::string& raw_profile_text) {
  Transcript t;
  t.record_id = record.id;
  t.topology = to_string(options.topology.kind);
  t.label = record.label;
  t.belief.prior = options.belief_prior;

  std::string system;
  std::string tag;
  switch (options.topology.kind) {
    case TopologyKind::zero_shot:
      system = zero_shot_prompt();
      tag = "zero_shot";
      break;
    case TopologyKind::cot:
      system = cot_prompt();
      tag = "cot";
      break;
    case TopologyKind::single_agent_multitask:
      system = single_agent_prompt(*options.catalog);
      tag = "single_agent_multitask";
      break;
    default:
      throw MascaError("not a baseline topology");
  }

  ChatRequest request;
  request.model_id = options.topology.default_model;
  request.temperature = options.temperature;
  request.max_tokens = options.max_tokens;
  request.tag = tag;
  request.messages.push_back({"system", system});
  request.messages.push_back({"user", "## Structured Profile\n\n" + raw_profile_text + "\n"});

  ChatResponse response = service.complete(request);
  t.baseline_calls.push_back({tag, response.text, response.usage, response.recorded_latency_ms});

  try {
    t.decision = parse_label(response.text);
    t.decision_source = "parsed_text";
  } catch (const DataError& ex) {
    t.decision_source = "none";
    t.notes.push_back(ex.what());
  }
  return t;
}

}  // namespace

Transcript run_pipeline(const ApplicantRecord& record, const RunOptions& options,
                        CompletionService& service) {
  if (!options.schema || !options.buckets || !options.catalog) {
    throw MascaError("run_pipeline: options.schema/buckets/catalog must be set");
  }
  const StructuredProfile profile = render_structured(record, *options.schema);
  const std::string raw_profile_text = profile_to_text(profile);

  const TopologyKind kind = options.topology.kind;
  if (kind == TopologyKind::zero_shot || kind == TopologyKind::cot ||
      kind == TopologyKind::single_agent_multitask) {
    return run_baseline(record, options, service, raw_profile_text);
  }

  Transcript t;
  t.record_id = record.id;
  t.topology = to_string(kind);
  t.label = record.label;
  t.belief.prior = options.belief_prior;

  std::map<std::string, std::string> context;
  context["raw_profile"] = raw_profile_text;
  context["computed_ratios"] =
      ratios_report(compute_ratios(numericize(record, *options.schema, *options.buckets,
                                              options.income)));

  static const std::vector<AgentRole> kLayer1 = {
      AgentRole::data_analyst, AgentRole::contextualizer, AgentRole::feature_engineer};
  static const std::vector<AgentRole> kLayer2 = {
      AgentRole::risk_modeler, AgentRole::income_stability_analyst, AgentRole::debt_analyst,
      AgentRole::reward_modeler};

  const bool flat = kind == TopologyKind::flat;
  std::vector<AgentOutput> layer2;

  if (flat) {
    // Single level: every agent sees only the raw profile, no barriers.
    std::vector<AgentRole> all(kAllRoles.begin(), kAllRoles.end());
    std::vector<AgentOutput> outputs =
        run_layer(all, options, context, service, SelectorMode::raw_profile_only);
    for (AgentOutput& out : outputs) {
      if (layer_of(out.role) == 2) layer2.push_back(out);
      t.agents.push_back(std::move(out));
    }
  } else {
    std::vector<AgentOutput> layer1 =
        run_layer(kLayer1, options, context, service, SelectorMode::normal);
    context["structured_profile"] = layer1[0].raw_text;
    context["persona_report"] = layer1[1].raw_text;
    context["derived_features"] = layer1[2].raw_text;
    for (AgentOutput& out : layer1) t.agents.push_back(std::move(out));

    layer2 = run_layer(kLayer2, options, context, service, SelectorMode::normal);
    context["risk_assessment"] = layer2[0].raw_text;
    context["income_stability_assessment"] = layer2[1].raw_text;
    context["debt_analysis"] = layer2[2].raw_text;
    context["reward_assessment"] = layer2[3].raw_text;
    for (const AgentOutput& out : layer2) t.agents.push_back(out);

    if (kind == TopologyKind::hierarchical3) {
      std::vector<AgentOutput> layer3 = run_layer({AgentRole::risk_reward_optimizer}, options,
                                                  context, service, SelectorMode::normal);
      context["risk_reward_analysis"] = layer3[0].raw_text;
      t.agents.push_back(std::move(layer3[0]));
      std::vector<AgentOutput> layer4 = run_layer({AgentRole::decision_orchestrator}, options,
                                                  context, service, SelectorMode::normal);
      t.agents.push_back(std::move(layer4[0]));
    } else {
      // two_level: the assessors' outputs go straight to the orchestrator.
      std::vector<AgentOutput> layer4 =
          run_layer({AgentRole::decision_orchestrator}, options, context, service,
                    SelectorMode::without_optimizer);
      t.agents.push_back(std::move(layer4[0]));
    }
  }

  // Belief updates from the assessment quartet, canonical order.
  for (const AgentOutput& out : layer2) {
    if (auto signal = default_risk_signal(out)) {
      t.belief = update_belief(std::move(t.belief), to_string(out.role),
                               std::min(std::max(*signal, 0.0), 1.0),
                               belief_weight(options, out.role));
    }
  }

  // Risk-reward ratio: the optimizer's when valid, else the deterministic
  // aggregate as fallback oracle.
  const AgentOutput* optimizer = nullptr;
  const AgentOutput* orchestrator = nullptr;
  for (const AgentOutput& out : t.agents) {
    if (out.role == AgentRole::risk_reward_optimizer) optimizer = &out;
    if (out.role == AgentRole::decision_orchestrator) orchestrator = &out;
  }

  if (optimizer && optimizer->valid) {
    t.risk_reward_ratio = optimizer->scores.at("risk_reward_ratio");
    t.risk_reward_source = "agent";
  } else {
    try {
      RiskRewardAggregate aggregate = aggregate_risk_reward(layer2, options.aggregate_weights);
      t.risk_reward_ratio = aggregate.ratio;
      t.risk_reward_source = "deterministic";
      if (optimizer) {
        t.notes.push_back("optimizer output invalid; deterministic risk-reward fallback used");
      }
      if (aggregate.reward_floor_applied) {
        t.notes.push_back("reward floor applied");
      }
    } catch (const MascaError& ex) {
      t.risk_reward_source = "none";
      t.notes.push_back(ex.what());
    }
  }

  // Final decision: orchestrator payload when usable, deterministic rule
  // otherwise. Hierarchical runs never abort on one bad agent.
  bool decided = false;
  if (orchestrator && orchestrator->valid) {
    try {
      t.decision = parse_label(orchestrator->payload.at("decision").get<std::string>());
      t.decision_source = "agent";
      t.confidence = orchestrator->scores.at("confidence");
      decided = true;
    } catch (const DataError& ex) {
      t.notes.push_back(std::string("orchestrator decision unparseable: ") + ex.what());
    }
  }
  if (!decided) {
    DeterministicDecision fallback =
        decide_deterministic(t.risk_reward_ratio, t.belief.posterior(), options.thresholds);
    t.decision = fallback.label;
    t.decision_source = "deterministic";
    t.confidence = fallback.confidence;
    if (orchestrator && !orchestrator->valid) {
      t.notes.push_back("orchestrator output invalid; deterministic decision used");
    }
  }
  return t;
}

RunResult run_dataset(const std::vector<ApplicantRecord>& records, const RunOptions& options,
                      CompletionService& service, const std::filesystem::path& run_dir,
                      const nlohmann::json& meta, int concurrency, bool resume) {
  std::filesystem::create_directories(run_dir);
  write_file_atomic(run_dir / "meta.json", meta.dump(2) + "\n");

  const auto transcripts_path = run_dir / "transcripts.jsonl";
  std::vector<std::string> existing_lines;
  std::map<std::string, bool> existing_ids;
  if (resume && std::filesystem::exists(transcripts_path)) {
    std::istringstream in(read_file(transcripts_path));
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      existing_lines.push_back(line);
      existing_ids[transcript_from_jsonl_line(line).record_id] = true;
    }
  }

  RunResult result;
  std::vector<std::optional<std::string>> lines(records.size());
  std::vector<std::string> errors(records.size());
  {
    ThreadPool pool(static_cast<std::size_t>(std::max(concurrency, 1)));
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (existing_ids.count(records[i].id)) {
        ++result.skipped;
        continue;
      }
      pool.submit([&, i] {
        try {
          lines[i] = transcript_to_jsonl_line(run_pipeline(records[i], options, service));
        } catch (const std::exception& ex) {
          errors[i] = ex.what();
        }
      });
    }
    pool.wait_idle();
  }

  std::ostringstream out;
  for (const std::string& line : existing_lines) out << line << "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (lines[i]) {
      out << *lines[i] << "\n";
      ++result.completed;
    } else if (!errors[i].empty()) {
      ++result.failed;
      if (result.first_error.empty()) {
        result.first_error = "record " + records[i].id + ": " + errors[i];
      }
    }
  }
  write_file_atomic(transcripts_path, out.str());
  return result;
}

}  // namespace masca
