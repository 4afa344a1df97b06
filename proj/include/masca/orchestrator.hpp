#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "masca/agents.hpp"
#include "masca/backend.hpp"
#include "masca/dataset.hpp"
#include "masca/features.hpp"

namespace masca {

enum class TopologyKind {
  hierarchical3,
  two_level,
  flat,
  single_agent_multitask,
  zero_shot,
  cot,
};

std::string to_string(TopologyKind kind);
TopologyKind topology_kind_from_string(const std::string& s);

struct Topology {
  TopologyKind kind = TopologyKind::hierarchical3;
  std::string default_model = "gpt-4o";
  std::map<AgentRole, std::string> model_map;  // per-role overrides

  std::string model_for(AgentRole role) const;
};

struct BeliefObservation {
  std::string role;
  double signal = 0.5;  // default-risk signal in [0,1]
  double weight = 1.0;
};

/// Weighted log-odds belief over default risk. The posterior is a pure fold
/// of prior and observations, so it is order-invariant and replayable.
struct BeliefState {
  double prior = 0.3;
  std::vector<BeliefObservation> observations;

  double posterior() const;
};

/// Appends one observation. Signals are clamped to [1e-6, 1-1e-6] inside the
/// fold; a neutral 0.5 signal leaves the posterior unchanged.
BeliefState update_belief(BeliefState b, const std::string& role, double signal, double weight);

struct AggregateWeights {
  double risk = 1.0;
  double stability = 1.0;
  double feasibility = 1.0;
};

struct RiskRewardAggregate {
  double aggregate_risk = 0.0;
  double reward = 0.0;
  double ratio = 0.0;
  bool reward_floor_applied = false;
  std::map<std::string, double> components;  // included default-risk signals
};

/// Deterministic oracle for the optimizer: weighted mean of the risk-side
/// signals over the reward score, floored at 1e-6. Throws when a side has no
/// valid score.
RiskRewardAggregate aggregate_risk_reward(const std::vector<AgentOutput>& layer2_outputs,
                                          const AggregateWeights& weights);

struct Thresholds {
  double ratio_tau = 1.0;
  double posterior_star = 0.5;
};

struct DeterministicDecision {
  CreditLabel label = CreditLabel::bad;
  double confidence = 0.0;
};

/// good iff ratio <= tau and posterior <= p*, boundaries inclusive. A missing
/// ratio fails the ratio condition. confidence = min(|posterior-p*|+|ratio-tau|, 1).
DeterministicDecision decide_deterministic(std::optional<double> ratio, double posterior,
                                           const Thresholds& thresholds);

struct Scenario {
  std::string shock_name;
  std::map<std::string, double> multipliers;  // numerical attribute id -> factor

  static Scenario from_json_text(const std::string& text);
  static Scenario from_file(const std::filesystem::path& path);
};

/// Scales numerical attributes (rounded to the attribute's integer
/// granularity) and suffixes the id with the scenario name.
ApplicantRecord perturb_scenario(const ApplicantRecord& record, const Scenario& scenario,
                                 const AttributeSchema& schema);

struct BaselineCall {
  std::string tag;
  std::string raw_text;
  TokenUsage usage;
  double latency_ms = 0.0;
};

struct Transcript {
  std::string record_id;
  std::string topology;
  std::optional<CreditLabel> label;  // ground truth carried for scoring
  std::vector<AgentOutput> agents;   // canonical layer order
  std::vector<BaselineCall> baseline_calls;
  BeliefState belief;
  std::optional<double> risk_reward_ratio;
  std::string risk_reward_source = "none";  // agent | deterministic | none
  std::optional<CreditLabel> decision;
  std::string decision_source = "none";  // agent | parsed_text | deterministic | none
  std::optional<double> confidence;
  std::vector<std::string> notes;
};

std::string transcript_to_jsonl_line(const Transcript& t);
Transcript transcript_from_jsonl_line(const std::string& line);

struct RunOptions {
  Topology topology;
  const AttributeSchema* schema = nullptr;
  const BucketTable* buckets = nullptr;
  const AgentCatalog* catalog = nullptr;
  IncomeEstimator income;  // optional estimator hook
  Thresholds thresholds;
  double belief_prior = 0.3;
  std::map<std::string, double> belief_weights;  // per role, default 1.0
  AggregateWeights aggregate_weights;
  double temperature = 0.0;
  int max_tokens = 1024;
};

/// Executes the configured topology over one record. Deterministic against a
/// scripted backend. Backend errors propagate to the caller.
Transcript run_pipeline(const ApplicantRecord& record, const RunOptions& options,
                        CompletionService& service);

struct RunResult {
  std::size_t completed = 0;
  std::size_t skipped = 0;  // already present when resuming
  std::size_t failed = 0;
  std::string first_error;
};

/// Runs records in parallel (bounded pool), writing meta.json first and
/// transcripts.jsonl in input order. With resume=true, records whose ids are
/// already present are kept verbatim and skipped.
RunResult run_dataset(const std::vector<ApplicantRecord>& records, const RunOptions& options,
                      CompletionService& service, const std::filesystem::path& run_dir,
                      const nlohmann::json& meta, int concurrency, bool resume);

}  // namespace masca
