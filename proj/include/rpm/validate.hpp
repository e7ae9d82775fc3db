#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rpm/domain.hpp"

namespace rpm {

// Each overload returns the list of violated invariants; empty means valid.
using ValidationReport = std::vector<std::string>;

ValidationReport validate(const Interaction& v);
ValidationReport validate(const UserHistory& v);
ValidationReport validate(const Feature& v);
ValidationReport validate(const FeatureSet& v);
ValidationReport validate(const FactorStats& v);
ValidationReport validate(const Factor& v);
ValidationReport validate(const FactorSet& v);
ValidationReport validate(const InfluenceJudgment& v);
ValidationReport validate(const ReasoningExample& v, std::optional<std::size_t> embed_dim = std::nullopt);
ValidationReport validate(const ReasoningMemory& v);
ValidationReport validate(const TaskProfile& v);
ValidationReport validate(const PredictionRecord& v, std::optional<int> k = std::nullopt);
ValidationReport validate(const PasConfig& v);
ValidationReport validate(const RetrievalConfig& v);

}  // namespace rpm
