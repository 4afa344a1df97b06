#include "masca/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "masca/builtin_assets.hpp"
#include "masca/util.hpp"

namespace masca {

using json = nlohmann::json;

namespace {

struct RoleInfo {
  AgentRole role;
  const char* name;
  int layer;
};

constexpr std::array<RoleInfo, 9> kRoleInfo = {{
    {AgentRole::data_analyst, "data_analyst", 1},
    {AgentRole::contextualizer, "contextualizer", 1},
    {AgentRole::feature_engineer, "feature_engineer", 1},
    {AgentRole::risk_modeler, "risk_modeler", 2},
    {AgentRole::income_stability_analyst, "income_stability_analyst", 2},
    {AgentRole::debt_analyst, "debt_analyst", 2},
    {AgentRole::reward_modeler, "reward_modeler", 2},
    {AgentRole::risk_reward_optimizer, "risk_reward_optimizer", 3},
    {AgentRole::decision_orchestrator, "decision_orchestrator", 4},
}};

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::string to_string(AgentRole role) {
  for (const auto& info : kRoleInfo) {
    if (info.role == role) return info.name;
  }
  throw MascaError("unknown agent role");
}

AgentRole agent_role_from_string(const std::string& s) {
  for (const auto& info : kRoleInfo) {
    if (s == info.name) return info.role;
  }
  throw ConfigError("unknown agent role \"" + s + "\"");
}

int layer_of(AgentRole role) {
  for (const auto& info : kRoleInfo) {
    if (info.role == role) return info.layer;
  }
  throw MascaError("unknown agent role");
}

const SchemaDef& output_schema(AgentRole role) {
  static const std::map<AgentRole, SchemaDef> schemas = [] {
    std::map<AgentRole, SchemaDef> m;
    m[AgentRole::data_analyst] = {{
        {"structured_data", FieldKind::list},
    }};
    m[AgentRole::contextualizer] = {{
        {"output_requirements", FieldKind::object},
        {"output_requirements.persona_report", FieldKind::text},
        {"output_requirements.explainability", FieldKind::text},
        {"output_requirements.context_confidence_score", FieldKind::score, 0.0, 1.0},
    }};
    m[AgentRole::feature_engineer] = {{
        {"derived_features and their respective values", FieldKind::list},
        {"recommendations", FieldKind::list},
        {"feature_report", FieldKind::text},
    }};
    m[AgentRole::risk_modeler] = {{
        {"pattern_analysis", FieldKind::text},
        {"risk_score", FieldKind::score, 0.0, 1.0},
        {"recommendations", FieldKind::list},
    }};
    m[AgentRole::income_stability_analyst] = {{
        {"income_analysis", FieldKind::text},
        {"income_stability_score", FieldKind::score, 0.0, 1.0},
        {"recommendations", FieldKind::list},
    }};
    m[AgentRole::debt_analyst] = {{
        {"debt_analysis", FieldKind::text},
        {"loan_feasibility_score", FieldKind::score, 0.0, 1.0},
        {"recommendations", FieldKind::list},
    }};
    m[AgentRole::reward_modeler] = {{
        {"profitability_assessment", FieldKind::text},
        {"overall_reward_score", FieldKind::score, 0.0, 1.0},
        {"recommendations", FieldKind::list},
    }};
    m[AgentRole::risk_reward_optimizer] = {{
        {"risk_reward_ratio", FieldKind::score, 0.0, kInf},
        {"risk_assessment", FieldKind::text},
        {"reward_potential", FieldKind::text},
        {"final_recommendation", FieldKind::text},
    }};
    m[AgentRole::decision_orchestrator] = {{
        {"decision", FieldKind::text},
        {"confidence", FieldKind::score, 0.0, 1.0},
        {"rationale", FieldKind::text},
    }};
    return m;
  }();
  return schemas.at(role);
}

namespace {

const json* navigate(const json& payload, const std::string& dotted_path) {
  const json* node = &payload;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = dotted_path.find('.', start);
    const std::string key = dotted_path.substr(start, dot - start);
    if (!node->is_object() || !node->contains(key)) {
      return nullptr;
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return node;
}

std::string range_text(double min, double max) {
  std::ostringstream out;
  auto one = [](double v) {
    if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
    return format_fixed(v, 4);
  };
  out << "[" << one(min) << ",";
  if (std::isinf(max)) {
    out << "inf)";
  } else {
    out << one(max) << "]";
  }
  return out.str();
}

std::string leaf_name(const std::string& dotted_path) {
  auto dot = dotted_path.rfind('.');
  return dot == std::string::npos ? dotted_path : dotted_path.substr(dot + 1);
}

}  // namespace

ValidationResult validate_output(const SchemaDef& schema, const nlohmann::json& payload) {
  ValidationResult result;
  if (payload.is_null() || !payload.is_object()) {
    result.violations.push_back("payload is not a JSON object");
    return result;
  }
  for (const FieldSpec& field : schema.fields) {
    const json* node = navigate(payload, field.path);
    if (!node) {
      result.violations.push_back("missing field " + field.path);
      continue;
    }
    switch (field.kind) {
      case FieldKind::text:
        if (!node->is_string()) {
          result.violations.push_back(field.path + " expects text");
        }
        break;
      case FieldKind::list:
        if (!node->is_array()) {
          result.violations.push_back(field.path + " expects a list");
        }
        break;
      case FieldKind::object:
        if (!node->is_object()) {
          result.violations.push_back(field.path + " expects an object");
        }
        break;
      case FieldKind::score: {
        if (!node->is_number()) {
          result.violations.push_back(field.path + " expects a number");
          break;
        }
        const double v = node->get<double>();
        result.scores[leaf_name(field.path)] = v;
        if (!std::isfinite(v) || v < field.min || v > field.max) {
          result.violations.push_back(leaf_name(field.path) + " out of " +
                                      range_text(field.min, field.max));
        }
        break;
      }
    }
  }
  result.valid = result.violations.empty();
  return result;
}

const std::vector<ArtifactDef>& artifact_registry() {
  static const std::vector<ArtifactDef> registry = {
      {"raw_profile", "Structured Profile", 0},
      {"computed_ratios", "Computed Financial Ratios", 0},
      {"structured_profile", "Structured Profile", 1},
      {"persona_report", "Persona Report", 1},
      {"derived_features", "Derived Features", 1},
      {"risk_assessment", "Risk Assessment", 2},
      {"income_stability_assessment", "Income Stability Assessment", 2},
      {"debt_analysis", "Debt Analysis", 2},
      {"reward_assessment", "Reward Assessment", 2},
      {"risk_reward_analysis", "Risk-Reward Analysis", 3},
  };
  return registry;
}

const ArtifactDef& artifact_def(const std::string& id) {
  for (const auto& def : artifact_registry()) {
    if (def.id == id) return def;
  }
  throw ConfigError("unknown artifact \"" + id + "\"");
}

namespace {

std::vector<std::string> canonical_selector(AgentRole role) {
  switch (role) {
    case AgentRole::data_analyst:
      return {"raw_profile"};
    case AgentRole::contextualizer:
      return {"raw_profile"};
    case AgentRole::feature_engineer:
      return {"raw_profile", "computed_ratios"};
    case AgentRole::risk_modeler:
    case AgentRole::income_stability_analyst:
    case AgentRole::debt_analyst:
    case AgentRole::reward_modeler:
      return {"structured_profile", "persona_report", "derived_features"};
    case AgentRole::risk_reward_optimizer:
      return {"risk_assessment", "income_stability_assessment", "debt_analysis",
              "reward_assessment"};
    case AgentRole::decision_orchestrator:
      return {"risk_assessment", "income_stability_assessment", "debt_analysis",
              "reward_assessment", "risk_reward_analysis"};
  }
  throw MascaError("unknown agent role");
}

const char* builtin_prompt(AgentRole role) {
  switch (role) {
    case AgentRole::data_analyst:
      return assets::kPromptDataAnalyst;
    case AgentRole::contextualizer:
      return assets::kPromptContextualizer;
    case AgentRole::feature_engineer:
      return assets::kPromptFeatureEngineer;
    case AgentRole::risk_modeler:
      return assets::kPromptRiskModeler;
    case AgentRole::income_stability_analyst:
      return assets::kPromptIncomeStabilityAnalyst;
    case AgentRole::debt_analyst:
      return assets::kPromptDebtAnalyst;
    case AgentRole::reward_modeler:
      return assets::kPromptRewardModeler;
    case AgentRole::risk_reward_optimizer:
      return assets::kPromptRiskRewardOptimizer;
    case AgentRole::decision_orchestrator:
      return assets::kPromptDecisionOrchestrator;
  }
  throw MascaError("unknown agent role");
}

}  // namespace

const AgentCatalog& AgentCatalog::builtin() {
  static const AgentCatalog catalog = [] {
    AgentCatalog c;
    for (AgentRole role : kAllRoles) {
      AgentSpec spec;
      spec.role = role;
      spec.layer = layer_of(role);
      spec.system_prompt = builtin_prompt(role);
      spec.input_selector = canonical_selector(role);
      c.specs_[role] = std::move(spec);
    }
    c.validate();
    return c;
  }();
  return catalog;
}

AgentCatalog AgentCatalog::from_file(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("agent catalog: invalid JSON: ") + ex.what());
  }
  AgentCatalog catalog;
  const auto base = path.parent_path();
  for (const auto& entry : doc.at("agents")) {
    AgentSpec spec;
    spec.role = agent_role_from_string(entry.at("role").get<std::string>());
    spec.layer = layer_of(spec.role);
    spec.system_prompt = read_file(base / entry.at("prompt_path").get<std::string>());
    spec.model_id = entry.value("model_id", "");
    if (entry.contains("input_selector")) {
      for (const auto& id : entry["input_selector"]) {
        spec.input_selector.push_back(id.get<std::string>());
      }
    } else {
      spec.input_selector = canonical_selector(spec.role);
    }
    catalog.specs_[spec.role] = std::move(spec);
  }
  catalog.validate();
  return catalog;
}

const AgentSpec& AgentCatalog::spec(AgentRole role) const {
  auto it = specs_.find(role);
  if (it == specs_.end()) {
    throw ConfigError("agent catalog has no spec for role " + to_string(role));
  }
  return it->second;
}

std::map<std::string, std::string> AgentCatalog::prompt_checksums() const {
  std::map<std::string, std::string> checksums;
  for (const auto& [role, spec] : specs_) {
    checksums[to_string(role)] = sha256_hex(spec.system_prompt);
  }
  return checksums;
}

void AgentCatalog::validate() const {
  std::vector<std::string> violations;
  for (AgentRole role : kAllRoles) {
    auto it = specs_.find(role);
    if (it == specs_.end()) {
      violations.push_back("missing agent spec for " + to_string(role));
      continue;
    }
    const AgentSpec& spec = it->second;
    if (spec.system_prompt.empty()) {
      violations.push_back(to_string(role) + " has an empty prompt");
    }
    for (const std::string& id : spec.input_selector) {
      const ArtifactDef& def = artifact_def(id);  // throws on unknown id
      if (def.producer_layer >= spec.layer) {
        violations.push_back(to_string(role) + " selects artifact \"" + id +
                             "\" from layer " + std::to_string(def.producer_layer) +
                             ", not strictly earlier than its own layer " +
                             std::to_string(spec.layer));
      }
    }
  }
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "agent catalog invalid: ";
    for (std::size_t i = 0; i < violations.size(); ++i) {
      if (i) msg << "; ";
      msg << violations[i];
    }
    throw ConfigError(msg.str());
  }
}

std::string zero_shot_prompt() { return assets::kPromptZeroShot; }

std::string cot_prompt() { return std::string("Think step by step.\n\n") + assets::kPromptZeroShot; }

std::string single_agent_prompt(const AgentCatalog& catalog) {
  static constexpr std::array<AgentRole, 7> kTaskRoles = {
      AgentRole::data_analyst,     AgentRole::contextualizer,
      AgentRole::feature_engineer, AgentRole::risk_modeler,
      AgentRole::income_stability_analyst, AgentRole::debt_analyst,
      AgentRole::reward_modeler,
  };
  std::ostringstream out;
  out << "You are a single agent responsible for performing every task below "
         "yourself, in order.\n\n";
  for (AgentRole role : kTaskRoles) {
    out << "=== Task: " << to_string(role) << " ===\n"
        << catalog.spec(role).system_prompt << "\n\n";
  }
  out << "After performing all tasks, conclude with the final decision on whether "
         "the applicant is a good or bad credit risk. End your answer with a single "
         "line: Final decision: good   OR   Final decision: bad";
  return out.str();
}

ChatRequest build_prompt(const AgentSpec& spec, const std::map<std::string, std::string>& context,
                         double temperature, int max_tokens) {
  struct Selected {
    const ArtifactDef* def;
    const std::string* text;
  };
  std::vector<Selected> selected;
  for (const std::string& id : spec.input_selector) {
    auto it = context.find(id);
    if (it == context.end()) {
      throw MascaError("missing upstream artifact \"" + id + "\" for " + to_string(spec.role));
    }
    selected.push_back({&artifact_def(id), &it->second});
  }
  // Headings appear in the registry's fixed layer order, not selector order.
  std::stable_sort(selected.begin(), selected.end(), [](const Selected& a, const Selected& b) {
    const auto& reg = artifact_registry();
    auto pos = [&reg](const ArtifactDef* d) {
      return std::distance(reg.data(), d);
    };
    return pos(a.def) < pos(b.def);
  });

  std::ostringstream user;
  for (const Selected& s : selected) {
    user << "## " << s.def->heading << "\n\n" << *s.text << "\n\n";
  }

  ChatRequest request;
  request.model_id = spec.model_id;
  request.temperature = temperature;
  request.max_tokens = max_tokens;
  request.tag = to_string(spec.role);
  request.messages.push_back({"system", spec.system_prompt});
  request.messages.push_back({"user", user.str()});
  return request;
}

AgentOutput run_agent(const AgentSpec& spec, const std::map<std::string, std::string>& context,
                      CompletionService& service, double temperature, int max_tokens) {
  ChatRequest request = build_prompt(spec, context, temperature, max_tokens);

  AgentOutput output;
  output.role = spec.role;
  output.model_id = spec.model_id;

  auto attempt = [&](const ChatRequest& req) {
    ChatResponse response = service.complete(req);
    output.raw_text = response.text;
    output.usage.prompt_tokens += response.usage.prompt_tokens;
    output.usage.completion_tokens += response.usage.completion_tokens;
    output.latency_ms += response.recorded_latency_ms;
    try {
      ExtractedJson extracted = extract_json(response.text);
      output.payload = extracted.value;
      output.json_multiplicity = extracted.multiple_objects;
      ValidationResult check = validate_output(output_schema(spec.role), output.payload);
      output.valid = check.valid;
      output.violations = std::move(check.violations);
      output.scores = std::move(check.scores);
    } catch (const ExtractionError& ex) {
      output.payload = nullptr;
      output.valid = false;
      output.violations = {std::string("json extraction failed: ") + ex.what()};
      output.scores.clear();
    }
    return response.text;
  };

  const std::string first_reply = attempt(request);
  if (!output.valid) {
    ChatRequest retry = request;
    retry.messages.push_back({"assistant", first_reply});
    retry.messages.push_back({"user", kCorrectiveNudge});
    output.attempts = 2;
    attempt(retry);
  }
  return output;
}

}  // namespace masca
