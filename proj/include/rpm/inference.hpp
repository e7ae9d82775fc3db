#pragma once

// Stage 3: factor-aware features for the target query, retrieval of
// reasoning examples, and reasoning-aligned generation.

#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rpm/domain.hpp"
#include "rpm/factors.hpp"
#include "rpm/retrieval.hpp"

namespace rpm {

inline constexpr const char* kFlagUnknownFactorLabel = "unknown_factor_label";
inline constexpr const char* kFlagAnswerError = "answer_error";

// Stage 1 and 2 artifacts of one user. Raw-query embeddings of the memory
// are only needed by the query-cosine baseline and are computed on first use.
class UserState {
 public:
  UserState(FactorSet factors, ReasoningMemory memory);

  const FactorSet& factors() const { return factors_; }
  const ReasoningMemory& memory() const { return memory_; }
  const std::vector<std::vector<double>>& query_embeddings(const Services& s) const;

 private:
  FactorSet factors_;
  ReasoningMemory memory_;
  mutable std::mutex mu_;
  mutable std::optional<std::vector<std::vector<double>>> query_embeddings_;
};

struct InferenceConfig {
  RetrievalConfig retrieval;
  // false: the target output omits the reasoning field while retrieved
  // examples keep theirs.
  bool target_reasoning = true;
};

struct TargetFeatures {
  FeatureSet features;
  std::vector<std::string> flags;
};

// Maps the labels a model cited to a factor id. Each label may itself be a
// comma-separated list; the first one naming an existing factor wins
// (case-insensitive, ignoring a leading "3." style number).
std::optional<std::string> resolve_factor_label(const std::vector<std::string>& cited, const FactorSet& factors);

TargetFeatures extract_target_features(const Services& s, const std::string& query, const FactorSet& factors);

struct NormalizedAnswer {
  std::string answer;
  bool error = false;
};

// Free text passes through trimmed. Labelled tasks: exact (case-insensitive)
// class match, else the earliest class token in the text, else (ratings)
// the first in-range integer, else an answer error with an empty answer.
NormalizedAnswer normalize_answer(const std::string& raw, const TaskProfile& task);

// The JSON skeleton the generation prompt asks for.
std::string output_format(const TaskProfile& task, bool with_reasoning);

// Exemplars in the given order, numbered from 1; "(none)" when empty.
std::string format_exemplars(const std::vector<const ReasoningExample*>& exemplars, const FactorSet& factors,
                             const TaskProfile& task);

struct Generation {
  std::string reasoning;
  std::string answer;
  std::string raw_answer;
  bool answer_error = false;
};

// `exemplars` go into the prompt in the order given.
Generation generate(const Services& s, const std::string& query, const FeatureSet& target_features,
                    const FactorSet& factors, const std::vector<const ReasoningExample*>& exemplars,
                    bool with_reasoning);

RetrievalResult retrieve(const Services& s, const UserState& user, const std::string& query,
                         const FeatureSet& target_features, const RetrievalConfig& cfg);

// extract -> retrieve -> generate. The record's ledger lists this call's
// requests in issue order. Failures surface as StageError naming the step.
PredictionRecord personalize(const Services& s, const UserState& user, const std::string& query,
                             const InferenceConfig& cfg);

// Baseline without any user context.
PredictionRecord zero_shot(const Services& s, const std::string& query);

}  // namespace rpm
