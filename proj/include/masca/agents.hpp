#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "masca/backend.hpp"

namespace masca {

enum class AgentRole {
  data_analyst,
  contextualizer,
  feature_engineer,
  risk_modeler,
  income_stability_analyst,
  debt_analyst,
  reward_modeler,
  risk_reward_optimizer,
  decision_orchestrator,
};

inline constexpr std::array<AgentRole, 9> kAllRoles = {
    AgentRole::data_analyst,         AgentRole::contextualizer,
    AgentRole::feature_engineer,     AgentRole::risk_modeler,
    AgentRole::income_stability_analyst, AgentRole::debt_analyst,
    AgentRole::reward_modeler,       AgentRole::risk_reward_optimizer,
    AgentRole::decision_orchestrator,
};

std::string to_string(AgentRole role);
AgentRole agent_role_from_string(const std::string& s);

/// 1: ingestion trio, 2: assessment quartet, 3: optimizer, 4: orchestrator.
int layer_of(AgentRole role);

enum class FieldKind { text, score, list, object };

struct FieldSpec {
  std::string path;  // dotted path into the payload
  FieldKind kind = FieldKind::text;
  double min = 0.0;  // score fields only
  double max = 1.0;  // +infinity for unbounded-above scores
};

struct SchemaDef {
  std::vector<FieldSpec> fields;
};

/// Required payload shape for each role's JSON output.
const SchemaDef& output_schema(AgentRole role);

struct AgentOutput {
  AgentRole role = AgentRole::data_analyst;
  std::string model_id;
  std::string raw_text;
  nlohmann::json payload;  // extract_json result; null when extraction failed
  std::map<std::string, double> scores;
  bool valid = false;
  std::vector<std::string> violations;
  int attempts = 1;
  TokenUsage usage;        // summed over attempts
  double latency_ms = 0.0; // summed recorded latency, stable across cache replays
  bool json_multiplicity = false;
};

struct ValidationResult {
  bool valid = false;
  std::vector<std::string> violations;  // exhaustive, not first-failure
  std::map<std::string, double> scores;
};

ValidationResult validate_output(const SchemaDef& schema, const nlohmann::json& payload);

/// Pipeline artifacts agents can consume. Order defines the fixed heading
/// order inside user messages.
struct ArtifactDef {
  std::string id;
  std::string heading;
  int producer_layer = 0;  // 0 = available before any agent runs
};

const std::vector<ArtifactDef>& artifact_registry();
const ArtifactDef& artifact_def(const std::string& id);

struct AgentSpec {
  AgentRole role = AgentRole::data_analyst;
  int layer = 1;
  std::string system_prompt;
  std::vector<std::string> input_selector;  // artifact ids
  std::string model_id;                     // empty = resolved from run config
};

/// The nine agent definitions: bundled prompts and canonical wiring, or a
/// user catalog file (role -> prompt path, model_id, input_selector).
class AgentCatalog {
 public:
  static const AgentCatalog& builtin();
  static AgentCatalog from_file(const std::filesystem::path& path);

  const AgentSpec& spec(AgentRole role) const;
  /// sha256 per role prompt, recorded in run metadata.
  std::map<std::string, std::string> prompt_checksums() const;

 private:
  void validate() const;
  std::map<AgentRole, AgentSpec> specs_;
};

/// System prompt for the zero-shot baseline; cot prepends "Think step by step."
std::string zero_shot_prompt();
std::string cot_prompt();
/// Single-call baseline: the seven ingestion/assessment prompts concatenated,
/// closed with an instruction to state the final decision.
std::string single_agent_prompt(const AgentCatalog& catalog);

inline constexpr const char* kCorrectiveNudge =
    "Return only valid JSON matching the required format.";

/// System message from the agent spec, selected artifacts under fixed-order
/// headings. Throws when a selected artifact is missing from the context.
ChatRequest build_prompt(const AgentSpec& spec, const std::map<std::string, std::string>& context,
                         double temperature = 0.0, int max_tokens = 1024);

/// build_prompt -> complete -> extract_json -> validate_output, with exactly
/// one corrective retry on invalid output. Backend errors propagate.
AgentOutput run_agent(const AgentSpec& spec, const std::map<std::string, std::string>& context,
                      CompletionService& service, double temperature = 0.0,
                      int max_tokens = 1024);

}  // namespace masca
