#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "masca/orchestrator.hpp"

namespace masca {

/// Everything a run needs, merged from an optional JSON config file and flag
/// overrides (flags win). Paths are resolved relative to the working
/// directory, not the config file.
struct RunSettings {
  std::string dataset;
  std::string format = "statlog";
  std::string schema;  // empty = bundled schema
  std::string topology = "hierarchical3";

  std::string model = "gpt-4o";
  std::string orchestrator_model;  // optional heterogeneous override
  std::map<std::string, std::string> model_map;

  std::string backend_kind = "scripted";  // scripted | live
  std::string script;
  std::string endpoint;
  std::string api_key_env = "MASCA_API_KEY";
  int timeout_s = 120;
  int max_attempts = 3;

  double temperature = 0.0;
  int max_tokens = 1024;

  double tau = 1.0;
  double posterior_star = 0.5;
  double prior = 0.3;
  std::map<std::string, double> belief_weights;
  AggregateWeights aggregate_weights;

  int concurrency = 4;
  std::string out;
  std::string seed;
  bool cache = true;
  bool resume = false;

  std::string scenario;
  std::string bucket_table;
  std::string agent_catalog;
  std::optional<double> income_proxy;
};

RunSettings load_settings_json(const std::string& path);

/// Exhaustive: returns every violation, not the first.
std::vector<std::string> validate_settings(const RunSettings& settings, bool require_dataset);

/// Entry point behind the binary. Exit codes: 0 success, 1 usage or config
/// error, 2 runtime failure.
int dispatch(int argc, const char* const* argv);

}  // namespace masca
