#pragma once

// Core value types shared by every stage of the pipeline. All of them are
// plain aggregates: immutable once built, cheap to copy, serializable to JSON
// (see domain_json.hpp) and checkable with validate().

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rpm {

struct Interaction {
  std::string query;
  std::string response;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct UserHistory {
  std::string user_id;
  std::vector<Interaction> interactions;

  bool operator==(const UserHistory&) const = default;
};

struct Feature {
  std::string name;
  std::string context;
  std::optional<std::string> factor_id;

  bool operator==(const Feature&) const = default;
};

struct FeatureSet {
  std::size_t source_query_index = 0;
  std::vector<Feature> features;

  bool operator==(const FeatureSet&) const = default;
};

// Positional feature identity: (interaction ordinal, feature ordinal).
struct FeatureRef {
  std::size_t interaction = 0;
  std::size_t feature = 0;

  auto operator<=>(const FeatureRef&) const = default;
};

enum class Polarity { pos, neu, neg };
enum class StatsKind { discrete, open_ended };

std::string to_string(Polarity p);
std::optional<Polarity> polarity_from_string(const std::string& s);
std::string to_string(StatsKind k);

struct PolarityCounts {
  int pos = 0;
  int neu = 0;
  int neg = 0;

  int total() const { return pos + neu + neg; }
  bool operator==(const PolarityCounts&) const = default;
};

struct PolarityShare {
  double pos = 0.0;
  double neu = 0.0;
  double neg = 0.0;

  bool operator==(const PolarityShare&) const = default;
};

struct FactorStats {
  StatsKind kind = StatsKind::open_ended;
  // class label -> fraction; absent when the factor covers no interaction.
  std::optional<std::map<std::string, double>> propensity;
  int coverage = 0;
  int influence = 0;
  // Absent when no feature of the factor was judged influential.
  std::optional<PolarityShare> polarity;
  PolarityCounts polarity_counts;

  bool operator==(const FactorStats&) const = default;
};

struct Factor {
  std::string factor_id;
  std::string label;
  std::vector<FeatureRef> members;
  FactorStats stats;

  bool operator==(const Factor&) const = default;
};

// A user's factor partition together with the feature pool it partitions.
// feature_sets[i] is the extracted feature set of interaction i; factor_id
// fields on those features mirror the factor membership lists.
struct FactorSet {
  std::string user_id;
  std::vector<Factor> factors;
  std::vector<FeatureRef> residual;
  std::vector<FeatureSet> feature_sets;
  double coverage_fraction = 0.0;
  int rounds = 0;

  const Factor* find(const std::string& factor_id) const;
  std::size_t feature_count() const;
  bool operator==(const FactorSet&) const = default;
};

struct InfluenceJudgment {
  bool influenced = false;
  std::optional<Polarity> evaluation;

  bool operator==(const InfluenceJudgment&) const = default;
};

struct ReasoningExample {
  std::string query;
  FeatureSet features;
  std::string reasoning;
  std::string response;
  std::optional<std::vector<double>> embedding;
  // One vector per feature, cached for feature-level retrieval.
  std::vector<std::vector<double>> feature_embeddings;

  bool operator==(const ReasoningExample&) const = default;
};

struct MemoryProvenance {
  std::string chat_model;
  std::string embed_model;
  std::string built_at;
  std::size_t embed_dim = 0;
  int version = 1;

  bool operator==(const MemoryProvenance&) const = default;
};

struct ReasoningMemory {
  std::string user_id;
  std::vector<ReasoningExample> examples;
  MemoryProvenance provenance;

  bool operator==(const ReasoningMemory&) const = default;
};

enum class OutputMode { classification, regression_label, free_text };

std::string to_string(OutputMode m);
std::optional<OutputMode> output_mode_from_string(const std::string& s);

struct TaskProfile {
  std::string task_id;
  std::string description;
  std::optional<std::vector<std::string>> class_space;
  OutputMode output_mode = OutputMode::free_text;
  std::vector<std::string> metric_ids;
  // Placeholder names the task binds the query and the response to.
  std::vector<std::string> prompt_binding_keys;

  // Wording used when rendering shared templates.
  std::string task_name;
  std::string input_name;
  std::string output_name;
  // JSON key the model uses for the final answer during generation.
  std::string answer_field = "answer";
  // Which factor statistics to compute; defaults from output_mode.
  std::optional<StatsKind> stats_kind;

  const std::string& query_key() const { return prompt_binding_keys.at(0); }
  const std::string& response_key() const { return prompt_binding_keys.at(1); }
  StatsKind effective_stats_kind() const;
  bool operator==(const TaskProfile&) const = default;
};

struct CallLedgerEntry {
  std::string purpose;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_ms = 0.0;
  double cost_usd = 0.0;
  bool replayed = false;

  bool operator==(const CallLedgerEntry&) const = default;
};

struct ScoredExample {
  std::size_t index = 0;
  double score = 0.0;

  bool operator==(const ScoredExample&) const = default;
};

struct PredictionRecord {
  std::string target_query;
  FeatureSet target_features;
  std::vector<ScoredExample> retrieved;
  std::string reasoning;
  std::string answer;
  std::string raw_answer;
  bool answer_error = false;
  std::vector<std::string> flags;
  std::vector<CallLedgerEntry> ledger;

  bool operator==(const PredictionRecord&) const = default;
};

struct PasConfig {
  int candidates_per_round = 16;
  int max_selected_per_round = 8;
  int max_rounds = 3;
  double propose_sample_fraction = 0.30;
  double round_coverage_threshold = 0.95;
  std::uint64_t rng_seed = 0;

  bool operator==(const PasConfig&) const = default;
};

enum class RetrievalStrategy { random, bm25, query_cosine, feature_cosine, feature_level, two_stage };

std::string to_string(RetrievalStrategy s);
std::optional<RetrievalStrategy> retrieval_strategy_from_string(const std::string& s);

struct RetrievalConfig {
  RetrievalStrategy strategy = RetrievalStrategy::feature_cosine;
  int k = 3;
  int two_stage_pool_multiplier = 3;
  std::uint64_t seed = 0;

  bool operator==(const RetrievalConfig&) const = default;
};

}  // namespace rpm
