#pragma once

// Bundled data files, embedded at configure time from assets/.
namespace masca::assets {

extern const char* kGermanSchemaJson;
extern const char* kBucketTableJson;

extern const char* kPromptDataAnalyst;
extern const char* kPromptContextualizer;
extern const char* kPromptFeatureEngineer;
extern const char* kPromptRiskModeler;
extern const char* kPromptIncomeStabilityAnalyst;
extern const char* kPromptDebtAnalyst;
extern const char* kPromptRewardModeler;
extern const char* kPromptRiskRewardOptimizer;
extern const char* kPromptDecisionOrchestrator;
extern const char* kPromptZeroShot;

}  // namespace masca::assets
