#include "rpm/validate.hpp"

#include <cmath>
#include <set>

namespace rpm {
namespace {

constexpr double kSumTolerance = 1e-9;

void append_prefixed(ValidationReport& out, const ValidationReport& in, const std::string& prefix) {
  for (const auto& msg : in) out.push_back(prefix + msg);
}

bool in_unit_interval(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

}  // namespace

ValidationReport validate(const Interaction& v) {
  ValidationReport out;
  if (v.query.empty()) out.push_back("query non-empty");
  if (v.response.empty()) out.push_back("response non-empty");
  return out;
}

ValidationReport validate(const UserHistory& v) {
  ValidationReport out;
  if (v.user_id.empty()) out.push_back("user_id non-empty");
  for (std::size_t i = 0; i < v.interactions.size(); ++i) {
    append_prefixed(out, validate(v.interactions[i]), "interaction[" + std::to_string(i) + "]: ");
    if (i > 0 && v.interactions[i].timestamp < v.interactions[i - 1].timestamp) {
      out.push_back("interactions ordered by timestamp (violated at " + std::to_string(i) + ")");
    }
  }
  return out;
}

ValidationReport validate(const Feature& v) {
  ValidationReport out;
  if (v.name.empty()) out.push_back("name non-empty");
  if (v.context.empty()) out.push_back("context non-empty");
  if (v.factor_id && v.factor_id->empty()) out.push_back("factor_id non-empty when present");
  return out;
}

ValidationReport validate(const FeatureSet& v) {
  ValidationReport out;
  for (std::size_t j = 0; j < v.features.size(); ++j) {
    append_prefixed(out, validate(v.features[j]), "feature[" + std::to_string(j) + "]: ");
  }
  return out;
}

ValidationReport validate(const FactorStats& v) {
  ValidationReport out;
  if (v.coverage < 0) out.push_back("coverage non-negative");
  if (v.influence < 0) out.push_back("influence non-negative");
  if (v.influence > v.coverage) out.push_back("influence <= coverage");
  if (v.kind == StatsKind::discrete && v.propensity) {
    double sum = 0.0;
    bool in_range = true;
    for (const auto& [label, p] : *v.propensity) {
      in_range = in_range && in_unit_interval(p);
      sum += p;
    }
    if (!in_range) out.push_back("propensity values in [0,1]");
    if (v.coverage > 0 && std::fabs(sum - 1.0) > kSumTolerance) out.push_back("propensity sums to 1");
  }
  if (v.kind == StatsKind::open_ended && v.propensity) {
    out.push_back("propensity only for discrete kind");
  }
  if (v.polarity) {
    const auto& p = *v.polarity;
    if (!in_unit_interval(p.pos) || !in_unit_interval(p.neu) || !in_unit_interval(p.neg)) {
      out.push_back("polarity values in [0,1]");
    }
    if (std::fabs(p.pos + p.neu + p.neg - 1.0) > kSumTolerance) out.push_back("polarity sums to 1");
  }
  if (v.polarity_counts.pos < 0 || v.polarity_counts.neu < 0 || v.polarity_counts.neg < 0) {
    out.push_back("polarity counts non-negative");
  }
  return out;
}

ValidationReport validate(const Factor& v) {
  ValidationReport out;
  if (v.factor_id.empty()) out.push_back("factor_id non-empty");
  if (v.label.empty()) out.push_back("label non-empty");
  if (v.members.empty()) out.push_back("member_feature_refs non-empty");
  append_prefixed(out, validate(v.stats), "stats: ");
  return out;
}

ValidationReport validate(const FactorSet& v) {
  ValidationReport out;
  if (v.user_id.empty()) out.push_back("user_id non-empty");

  std::set<std::string> ids;
  for (const auto& f : v.factors) {
    append_prefixed(out, validate(f), "factor " + f.factor_id + ": ");
    if (!ids.insert(f.factor_id).second) out.push_back("factor ids unique (" + f.factor_id + ")");
  }

  auto ref_exists = [&](const FeatureRef& r) {
    return r.interaction < v.feature_sets.size() &&
           r.feature < v.feature_sets[r.interaction].features.size();
  };

  std::set<FeatureRef> seen;
  for (const auto& f : v.factors) {
    for (const auto& r : f.members) {
      if (!ref_exists(r)) {
        out.push_back("feature ref exists in pool");
        continue;
      }
      if (!seen.insert(r).second) out.push_back("no feature ref appears in two factors");
      const auto& feat = v.feature_sets[r.interaction].features[r.feature];
      if (feat.factor_id != f.factor_id) out.push_back("member feature factor_id equals factor_id");
    }
  }
  for (const auto& r : v.residual) {
    if (!ref_exists(r)) {
      out.push_back("feature ref exists in pool");
      continue;
    }
    if (!seen.insert(r).second) out.push_back("residual ref not also assigned");
    if (v.feature_sets[r.interaction].features[r.feature].factor_id) {
      out.push_back("residual feature has no factor_id");
    }
  }

  for (std::size_t i = 0; i < v.feature_sets.size(); ++i) {
    append_prefixed(out, validate(v.feature_sets[i]), "feature_set[" + std::to_string(i) + "]: ");
    for (const auto& feat : v.feature_sets[i].features) {
      if (feat.factor_id && ids.count(*feat.factor_id) == 0) {
        out.push_back("factor_id refers to an existing factor");
      }
    }
  }

  const std::size_t total = v.feature_count();
  if (seen.size() != total) out.push_back("members plus residual equal the feature pool");
  const std::size_t assigned = total - v.residual.size();
  const double expected = total == 0 ? 0.0 : static_cast<double>(assigned) / static_cast<double>(total);
  if (seen.size() == total && std::fabs(expected - v.coverage_fraction) > kSumTolerance) {
    out.push_back("coverage fraction equals assigned / all");
  }
  return out;
}

ValidationReport validate(const InfluenceJudgment& v) {
  ValidationReport out;
  if (v.influenced != v.evaluation.has_value()) out.push_back("evaluation present iff influenced");
  return out;
}

ValidationReport validate(const ReasoningExample& v, std::optional<std::size_t> embed_dim) {
  ValidationReport out;
  if (v.query.empty()) out.push_back("query non-empty");
  if (v.response.empty()) out.push_back("response non-empty");
  if (v.reasoning.empty()) out.push_back("reasoning non-empty");
  append_prefixed(out, validate(v.features), "features: ");
  if (v.embedding && embed_dim && *embed_dim > 0 && v.embedding->size() != *embed_dim) {
    out.push_back("embedding has the declared dimensionality");
  }
  if (!v.feature_embeddings.empty() && v.feature_embeddings.size() != v.features.features.size()) {
    out.push_back("one feature embedding per feature");
  }
  return out;
}

ValidationReport validate(const ReasoningMemory& v) {
  ValidationReport out;
  if (v.user_id.empty()) out.push_back("user_id non-empty");
  std::optional<std::size_t> dim;
  if (v.provenance.embed_dim > 0) dim = v.provenance.embed_dim;
  for (std::size_t i = 0; i < v.examples.size(); ++i) {
    append_prefixed(out, validate(v.examples[i], dim), "example[" + std::to_string(i) + "]: ");
  }
  return out;
}

ValidationReport validate(const TaskProfile& v) {
  ValidationReport out;
  if (v.task_id.empty()) out.push_back("task_id non-empty");
  const bool wants_classes = v.output_mode != OutputMode::free_text;
  if (wants_classes != v.class_space.has_value()) {
    out.push_back("class_space present iff output_mode != free_text");
  }
  if (v.class_space && v.class_space->empty()) out.push_back("class_space non-empty");
  if (v.prompt_binding_keys.size() < 2) out.push_back("prompt_binding_keys names query and response");
  if (v.answer_field.empty()) out.push_back("answer_field non-empty");
  return out;
}

ValidationReport validate(const PredictionRecord& v, std::optional<int> k) {
  ValidationReport out;
  if (k && static_cast<int>(v.retrieved.size()) > *k) out.push_back("retrieved length <= K");
  for (const auto& e : v.ledger) {
    if (e.prompt_tokens < 0 || e.completion_tokens < 0 || e.cost_usd < 0.0) {
      out.push_back("ledger counts non-negative");
      break;
    }
  }
  return out;
}

ValidationReport validate(const PasConfig& v) {
  ValidationReport out;
  if (v.candidates_per_round <= 0) out.push_back("candidates_per_round positive");
  if (v.max_selected_per_round <= 0) out.push_back("max_selected_per_round positive");
  if (v.max_rounds <= 0) out.push_back("max_rounds positive");
  if (!(v.propose_sample_fraction > 0.0 && v.propose_sample_fraction <= 1.0)) {
    out.push_back("propose_sample_fraction in (0,1]");
  }
  return out;
}

ValidationReport validate(const RetrievalConfig& v) {
  ValidationReport out;
  if (v.k < 0) out.push_back("k non-negative");
  if (v.two_stage_pool_multiplier <= 0) out.push_back("two_stage_pool_multiplier positive");
  return out;
}

}  // namespace rpm
