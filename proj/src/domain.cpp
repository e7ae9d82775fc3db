#include "rpm/domain.hpp"

namespace rpm {

std::string to_string(Polarity p) {
  switch (p) {
    case Polarity::pos: return "pos";
    case Polarity::neu: return "neu";
    case Polarity::neg: return "neg";
  }
  return "neu";
}

std::optional<Polarity> polarity_from_string(const std::string& s) {
  if (s == "pos") return Polarity::pos;
  if (s == "neu") return Polarity::neu;
  if (s == "neg") return Polarity::neg;
  return std::nullopt;
}

std::string to_string(StatsKind k) {
  return k == StatsKind::discrete ? "discrete" : "open_ended";
}

std::string to_string(OutputMode m) {
  switch (m) {
    case OutputMode::classification: return "classification";
    case OutputMode::regression_label: return "regression_label";
    case OutputMode::free_text: return "free_text";
  }
  return "free_text";
}

std::optional<OutputMode> output_mode_from_string(const std::string& s) {
  if (s == "classification") return OutputMode::classification;
  if (s == "regression_label") return OutputMode::regression_label;
  if (s == "free_text") return OutputMode::free_text;
  return std::nullopt;
}

std::string to_string(RetrievalStrategy s) {
  switch (s) {
    case RetrievalStrategy::random: return "random";
    case RetrievalStrategy::bm25: return "bm25";
    case RetrievalStrategy::query_cosine: return "query_cosine";
    case RetrievalStrategy::feature_cosine: return "feature_cosine";
    case RetrievalStrategy::feature_level: return "feature_level";
    case RetrievalStrategy::two_stage: return "two_stage";
  }
  return "feature_cosine";
}

std::optional<RetrievalStrategy> retrieval_strategy_from_string(const std::string& s) {
  for (auto v : {RetrievalStrategy::random, RetrievalStrategy::bm25, RetrievalStrategy::query_cosine,
                 RetrievalStrategy::feature_cosine, RetrievalStrategy::feature_level,
                 RetrievalStrategy::two_stage}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

const Factor* FactorSet::find(const std::string& factor_id) const {
  for (const auto& f : factors) {
    if (f.factor_id == factor_id) return &f;
  }
  return nullptr;
}

std::size_t FactorSet::feature_count() const {
  std::size_t n = 0;
  for (const auto& fs : feature_sets) n += fs.features.size();
  return n;
}

StatsKind TaskProfile::effective_stats_kind() const {
  if (stats_kind) return *stats_kind;
  return output_mode == OutputMode::free_text ? StatsKind::open_ended : StatsKind::discrete;
}

}  // namespace rpm
