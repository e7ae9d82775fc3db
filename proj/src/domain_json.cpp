#include "rpm/domain_json.hpp"

#include "rpm/error.hpp"

namespace rpm {
namespace {

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    out.reset();
  } else {
    out = it->template get<T>();
  }
}

template <typename T>
void get_or(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it != j.end() && !it->is_null()) out = it->template get<T>();
}

Polarity polarity_or_throw(const std::string& s) {
  auto p = polarity_from_string(s);
  if (!p) throw DataError("unknown polarity label '" + s + "'");
  return *p;
}

}  // namespace

void to_json(json& j, const Interaction& v) {
  j = json{{"query", v.query}, {"response", v.response}, {"timestamp", v.timestamp}};
}

void from_json(const json& j, Interaction& v) {
  j.at("query").get_to(v.query);
  j.at("response").get_to(v.response);
  v.timestamp = j.value("timestamp", std::int64_t{0});
}

void to_json(json& j, const UserHistory& v) {
  j = json{{"user_id", v.user_id}, {"interactions", v.interactions}};
}

void from_json(const json& j, UserHistory& v) {
  j.at("user_id").get_to(v.user_id);
  j.at("interactions").get_to(v.interactions);
}

void to_json(json& j, const Feature& v) {
  j = json{{"name", v.name}, {"context", v.context}};
  if (v.factor_id) j["factor_id"] = *v.factor_id;
}

void from_json(const json& j, Feature& v) {
  j.at("name").get_to(v.name);
  j.at("context").get_to(v.context);
  get_optional(j, "factor_id", v.factor_id);
}

void to_json(json& j, const FeatureSet& v) {
  j = json{{"source_query_index", v.source_query_index}, {"features", v.features}};
}

void from_json(const json& j, FeatureSet& v) {
  j.at("source_query_index").get_to(v.source_query_index);
  j.at("features").get_to(v.features);
}

void to_json(json& j, const FeatureRef& v) { j = json::array({v.interaction, v.feature}); }

void from_json(const json& j, FeatureRef& v) {
  if (!j.is_array() || j.size() != 2) throw DataError("feature ref must be a [interaction, feature] pair");
  j.at(0).get_to(v.interaction);
  j.at(1).get_to(v.feature);
}

void to_json(json& j, const FactorStats& v) {
  j = json{{"kind", to_string(v.kind)}, {"coverage", v.coverage}, {"influence", v.influence}};
  if (v.propensity) j["propensity"] = *v.propensity;
  if (v.polarity) {
    j["polarity"] = json{{"pos", v.polarity->pos}, {"neu", v.polarity->neu}, {"neg", v.polarity->neg}};
  }
  j["polarity_counts"] =
      json{{"pos", v.polarity_counts.pos}, {"neu", v.polarity_counts.neu}, {"neg", v.polarity_counts.neg}};
}

void from_json(const json& j, FactorStats& v) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "discrete") {
    v.kind = StatsKind::discrete;
  } else if (kind == "open_ended") {
    v.kind = StatsKind::open_ended;
  } else {
    throw DataError("unknown stats kind '" + kind + "'");
  }
  j.at("coverage").get_to(v.coverage);
  j.at("influence").get_to(v.influence);
  get_optional(j, "propensity", v.propensity);
  v.polarity.reset();
  if (auto it = j.find("polarity"); it != j.end() && !it->is_null()) {
    v.polarity = PolarityShare{it->at("pos").get<double>(), it->at("neu").get<double>(),
                               it->at("neg").get<double>()};
  }
  v.polarity_counts = {};
  if (auto it = j.find("polarity_counts"); it != j.end()) {
    v.polarity_counts = PolarityCounts{it->at("pos").get<int>(), it->at("neu").get<int>(),
                                       it->at("neg").get<int>()};
  }
}

void to_json(json& j, const Factor& v) {
  j = json{{"factor_id", v.factor_id}, {"label", v.label}, {"members", v.members}, {"stats", v.stats}};
}

void from_json(const json& j, Factor& v) {
  j.at("factor_id").get_to(v.factor_id);
  j.at("label").get_to(v.label);
  j.at("members").get_to(v.members);
  j.at("stats").get_to(v.stats);
}

void to_json(json& j, const FactorSet& v) {
  j = json{{"user_id", v.user_id},
           {"factors", v.factors},
           {"residual", v.residual},
           {"feature_sets", v.feature_sets},
           {"coverage_fraction", v.coverage_fraction},
           {"rounds", v.rounds}};
}

void from_json(const json& j, FactorSet& v) {
  j.at("user_id").get_to(v.user_id);
  j.at("factors").get_to(v.factors);
  j.at("residual").get_to(v.residual);
  j.at("feature_sets").get_to(v.feature_sets);
  j.at("coverage_fraction").get_to(v.coverage_fraction);
  v.rounds = j.value("rounds", 0);
}

void to_json(json& j, const InfluenceJudgment& v) {
  j = json{{"influenced", v.influenced}};
  if (v.evaluation) j["evaluation"] = to_string(*v.evaluation);
}

void from_json(const json& j, InfluenceJudgment& v) {
  j.at("influenced").get_to(v.influenced);
  v.evaluation.reset();
  if (auto it = j.find("evaluation"); it != j.end() && !it->is_null()) {
    v.evaluation = polarity_or_throw(it->get<std::string>());
  }
}

void to_json(json& j, const ReasoningExample& v) {
  j = json{{"query", v.query},
           {"features", v.features},
           {"reasoning", v.reasoning},
           {"response", v.response}};
  if (v.embedding) j["embedding"] = *v.embedding;
  if (!v.feature_embeddings.empty()) j["feature_embeddings"] = v.feature_embeddings;
}

void from_json(const json& j, ReasoningExample& v) {
  j.at("query").get_to(v.query);
  j.at("features").get_to(v.features);
  j.at("reasoning").get_to(v.reasoning);
  j.at("response").get_to(v.response);
  get_optional(j, "embedding", v.embedding);
  v.feature_embeddings.clear();
  get_or(j, "feature_embeddings", v.feature_embeddings);
}

void to_json(json& j, const MemoryProvenance& v) {
  j = json{{"chat_model", v.chat_model},
           {"embed_model", v.embed_model},
           {"built_at", v.built_at},
           {"embed_dim", v.embed_dim},
           {"version", v.version}};
}

void from_json(const json& j, MemoryProvenance& v) {
  j.at("chat_model").get_to(v.chat_model);
  j.at("embed_model").get_to(v.embed_model);
  v.built_at = j.value("built_at", std::string{});
  v.embed_dim = j.value("embed_dim", std::size_t{0});
  v.version = j.value("version", 1);
}

void to_json(json& j, const TaskProfile& v) {
  j = json{{"task_id", v.task_id},
           {"description", v.description},
           {"output_mode", to_string(v.output_mode)},
           {"metric_ids", v.metric_ids},
           {"prompt_binding_keys", v.prompt_binding_keys},
           {"task_name", v.task_name},
           {"input_name", v.input_name},
           {"output_name", v.output_name},
           {"answer_field", v.answer_field}};
  if (v.class_space) j["class_space"] = *v.class_space;
  if (v.stats_kind) j["stats_kind"] = to_string(*v.stats_kind);
}

void from_json(const json& j, TaskProfile& v) {
  j.at("task_id").get_to(v.task_id);
  v.description = j.value("description", std::string{});
  const auto mode = j.at("output_mode").get<std::string>();
  auto parsed = output_mode_from_string(mode);
  if (!parsed) throw DataError("unknown output_mode '" + mode + "'");
  v.output_mode = *parsed;
  get_optional(j, "class_space", v.class_space);
  v.metric_ids = j.value("metric_ids", std::vector<std::string>{});
  j.at("prompt_binding_keys").get_to(v.prompt_binding_keys);
  v.task_name = j.value("task_name", std::string{});
  v.input_name = j.value("input_name", std::string{});
  v.output_name = j.value("output_name", std::string{});
  v.answer_field = j.value("answer_field", std::string{"answer"});
  v.stats_kind.reset();
  if (auto it = j.find("stats_kind"); it != j.end() && !it->is_null()) {
    const auto s = it->get<std::string>();
    if (s == "discrete") {
      v.stats_kind = StatsKind::discrete;
    } else if (s == "open_ended") {
      v.stats_kind = StatsKind::open_ended;
    } else {
      throw DataError("unknown stats_kind '" + s + "'");
    }
  }
}

void to_json(json& j, const CallLedgerEntry& v) {
  j = json{{"purpose", v.purpose},
           {"prompt_tokens", v.prompt_tokens},
           {"completion_tokens", v.completion_tokens},
           {"latency_ms", v.latency_ms},
           {"cost_usd", v.cost_usd},
           {"replayed", v.replayed}};
}

void from_json(const json& j, CallLedgerEntry& v) {
  j.at("purpose").get_to(v.purpose);
  j.at("prompt_tokens").get_to(v.prompt_tokens);
  j.at("completion_tokens").get_to(v.completion_tokens);
  v.latency_ms = j.value("latency_ms", 0.0);
  j.at("cost_usd").get_to(v.cost_usd);
  v.replayed = j.value("replayed", false);
}

void to_json(json& j, const ScoredExample& v) { j = json{{"index", v.index}, {"score", v.score}}; }

void from_json(const json& j, ScoredExample& v) {
  j.at("index").get_to(v.index);
  j.at("score").get_to(v.score);
}

void to_json(json& j, const PredictionRecord& v) {
  j = json{{"target_query", v.target_query},
           {"target_features", v.target_features},
           {"retrieved", v.retrieved},
           {"reasoning", v.reasoning},
           {"answer", v.answer},
           {"raw_answer", v.raw_answer},
           {"answer_error", v.answer_error},
           {"flags", v.flags},
           {"ledger", v.ledger}};
}

void from_json(const json& j, PredictionRecord& v) {
  j.at("target_query").get_to(v.target_query);
  j.at("target_features").get_to(v.target_features);
  j.at("retrieved").get_to(v.retrieved);
  j.at("reasoning").get_to(v.reasoning);
  j.at("answer").get_to(v.answer);
  v.raw_answer = j.value("raw_answer", std::string{});
  v.answer_error = j.value("answer_error", false);
  v.flags = j.value("flags", std::vector<std::string>{});
  v.ledger = j.value("ledger", std::vector<CallLedgerEntry>{});
}

void to_json(json& j, const PasConfig& v) {
  j = json{{"candidates_per_round", v.candidates_per_round},
           {"max_selected_per_round", v.max_selected_per_round},
           {"max_rounds", v.max_rounds},
           {"propose_sample_fraction", v.propose_sample_fraction},
           {"round_coverage_threshold", v.round_coverage_threshold},
           {"rng_seed", v.rng_seed}};
}

void from_json(const json& j, PasConfig& v) {
  PasConfig d;
  v.candidates_per_round = j.value("candidates_per_round", d.candidates_per_round);
  v.max_selected_per_round = j.value("max_selected_per_round", d.max_selected_per_round);
  v.max_rounds = j.value("max_rounds", d.max_rounds);
  v.propose_sample_fraction = j.value("propose_sample_fraction", d.propose_sample_fraction);
  v.round_coverage_threshold = j.value("round_coverage_threshold", d.round_coverage_threshold);
  v.rng_seed = j.value("rng_seed", d.rng_seed);
}

void to_json(json& j, const RetrievalConfig& v) {
  j = json{{"strategy", to_string(v.strategy)},
           {"k", v.k},
           {"two_stage_pool_multiplier", v.two_stage_pool_multiplier},
           {"seed", v.seed}};
}

void from_json(const json& j, RetrievalConfig& v) {
  RetrievalConfig d;
  const auto name = j.value("strategy", to_string(d.strategy));
  auto s = retrieval_strategy_from_string(name);
  if (!s) throw DataError("unknown retrieval strategy '" + name + "'");
  v.strategy = *s;
  v.k = j.value("k", d.k);
  v.two_stage_pool_multiplier = j.value("two_stage_pool_multiplier", d.two_stage_pool_multiplier);
  v.seed = j.value("seed", d.seed);
}

}  // namespace rpm
