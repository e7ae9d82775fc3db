#pragma once

// Canonical JSON form of the domain types: snake_case keys, optional fields
// omitted when absent.

#include "json.hpp"

#include "rpm/domain.hpp"

namespace rpm {

using json = nlohmann::json;

void to_json(json& j, const Interaction& v);
void from_json(const json& j, Interaction& v);
void to_json(json& j, const UserHistory& v);
void from_json(const json& j, UserHistory& v);
void to_json(json& j, const Feature& v);
void from_json(const json& j, Feature& v);
void to_json(json& j, const FeatureSet& v);
void from_json(const json& j, FeatureSet& v);
void to_json(json& j, const FeatureRef& v);
void from_json(const json& j, FeatureRef& v);
void to_json(json& j, const FactorStats& v);
void from_json(const json& j, FactorStats& v);
void to_json(json& j, const Factor& v);
void from_json(const json& j, Factor& v);
void to_json(json& j, const FactorSet& v);
void from_json(const json& j, FactorSet& v);
void to_json(json& j, const InfluenceJudgment& v);
void from_json(const json& j, InfluenceJudgment& v);
void to_json(json& j, const ReasoningExample& v);
void from_json(const json& j, ReasoningExample& v);
void to_json(json& j, const MemoryProvenance& v);
void from_json(const json& j, MemoryProvenance& v);
void to_json(json& j, const TaskProfile& v);
void from_json(const json& j, TaskProfile& v);
void to_json(json& j, const CallLedgerEntry& v);
void from_json(const json& j, CallLedgerEntry& v);
void to_json(json& j, const ScoredExample& v);
void from_json(const json& j, ScoredExample& v);
void to_json(json& j, const PredictionRecord& v);
void from_json(const json& j, PredictionRecord& v);
void to_json(json& j, const PasConfig& v);
void from_json(const json& j, PasConfig& v);
void to_json(json& j, const RetrievalConfig& v);
void from_json(const json& j, RetrievalConfig& v);

}  // namespace rpm
