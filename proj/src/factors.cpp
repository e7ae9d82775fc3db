#include "rpm/factors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "rpm/error.hpp"
#include "rpm/parallel.hpp"
#include "rpm/prompt_text.hpp"

namespace rpm {

AssignmentMatrix::AssignmentMatrix(std::vector<FeatureRef> rows, std::vector<std::string> cols)
    : rows_(std::move(rows)), cols_(std::move(cols)), cells_(rows_.size() * cols_.size(), 0) {}

void AssignmentMatrix::set(std::size_t row, std::size_t col, bool value) {
  cells_.at(row * cols_.size() + col) = value ? 1 : 0;
}

bool AssignmentMatrix::at_most_one_per_row() const {
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    int n = 0;
    for (std::size_t c = 0; c < cols_.size(); ++c) n += at(r, c) ? 1 : 0;
    if (n > 1) return false;
  }
  return true;
}

ChatResult Services::chat(const std::string& prompt, const std::string& purpose) const {
  auto r = gateway.chat_complete(prompt, purpose);
  if (sink) sink->append(r.entry);
  return r;
}

EmbedResult Services::embed(const std::vector<std::string>& texts, const std::string& purpose) const {
  auto r = gateway.embed(texts, purpose);
  if (sink) sink->append(r.entry);
  return r;
}

namespace {

template <typename T>
const T& expect(const StructuredValue& v) {
  return std::get<T>(v);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string bullet_features(const std::vector<Feature>& features) {
  std::string out;
  for (const auto& f : features) out += "\n- " + feature_text(f);
  return out;
}

std::string join_labels(const std::vector<std::string>& labels) {
  if (labels.empty()) return "None";
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) out += ", ";
    out += labels[i];
  }
  return out;
}

constexpr const char* kResidualNote =
    "\nThis feature was not matched to any factor in earlier rounds. Assign it to the most semantically suitable "
    "existing factor from the list below; give the number of that factor.\n";

}  // namespace

FeatureSet extract_features(const Services& s, const Interaction& interaction, std::size_t ordinal) {
  Bindings b;
  bind_io(b, s.task, interaction.query, std::nullopt);
  b["factor_guidance"] = "";
  const auto prompt = s.templates.render(TemplateId::feature_extraction, s.task, b);
  const auto result = s.chat(prompt, "feature_extraction");
  const auto parsed = expect<FeatureList>(parse_structured(SchemaId::features, result.text));

  FeatureSet out;
  out.source_query_index = ordinal;
  for (const auto& f : parsed.features) out.features.push_back(Feature{f.name, f.context, std::nullopt});
  return out;
}

std::vector<std::string> propose_factors(const Services& s, const std::vector<Feature>& sampled,
                                         const std::vector<std::string>& prev_factors, int num_candidates) {
  Bindings b;
  b["num_factors"] = std::to_string(num_candidates);
  b["feature_examples"] = bullet_features(sampled);
  b["prev_factors"] = join_labels(prev_factors);
  const auto prompt = s.templates.render(TemplateId::factor_propose, s.task, b);

  std::size_t got = 0;
  for (int attempt = 0; attempt < 2; ++attempt) {
    // The retry restates the count so it is a different request (and a
    // different replay key) rather than a repeat of the first one.
    std::string text = prompt;
    if (attempt > 0) {
      text += "\n\nYour previous answer listed " + std::to_string(got) + " factors. Return exactly " +
              std::to_string(num_candidates) + ".";
    }
    const auto result = s.chat(text, attempt == 0 ? "factor_propose" : "factor_propose_retry");
    auto labels = expect<ProposalList>(parse_structured(SchemaId::factor_proposals, result.text)).labels;
    got = labels.size();
    if (static_cast<int>(got) == num_candidates) return labels;
  }
  throw ProtocolError("factor proposal returned " + std::to_string(got) + " candidates, expected " +
                      std::to_string(num_candidates));
}

std::optional<std::size_t> assign_feature(const Services& s, const Feature& feature,
                                          const std::vector<std::string>& candidates, bool residual) {
  if (candidates.empty()) throw Error("assign_feature needs at least one candidate");
  Bindings b;
  b["feature"] = feature_text(feature);
  b["proposed_factors"] = numbered_labels(candidates);
  b["assignment_note"] = residual ? kResidualNote : "";
  const auto prompt = s.templates.render(TemplateId::factor_assign, s.task, b);
  const auto result = s.chat(prompt, residual ? "factor_assign_residual" : "factor_assign");
  const auto choice = expect<AssignmentChoice>(parse_structured(SchemaId::assignment, result.text));
  if (!choice.index) return std::nullopt;
  if (*choice.index < 0 || static_cast<std::size_t>(*choice.index) >= candidates.size()) {
    throw ProtocolError("assignment index " + std::to_string(*choice.index) + " out of range for " +
                        std::to_string(candidates.size()) + " candidates");
  }
  return static_cast<std::size_t>(*choice.index);
}

std::vector<std::size_t> select_factors(const AssignmentMatrix& matrix, int max_selected) {
  std::vector<std::size_t> picked;
  std::vector<bool> covered(matrix.row_count(), false);
  std::vector<bool> used(matrix.col_count(), false);
  std::size_t remaining = matrix.row_count();

  while (remaining > 0 && static_cast<int>(picked.size()) < max_selected) {
    std::size_t best_col = 0;
    std::size_t best_gain = 0;
    for (std::size_t c = 0; c < matrix.col_count(); ++c) {
      if (used[c]) continue;
      std::size_t gain = 0;
      for (std::size_t r = 0; r < matrix.row_count(); ++r) {
        if (!covered[r] && matrix.at(r, c)) ++gain;
      }
      if (gain > best_gain) {
        best_gain = gain;
        best_col = c;
      }
    }
    if (best_gain == 0) break;
    used[best_col] = true;
    picked.push_back(best_col);
    for (std::size_t r = 0; r < matrix.row_count(); ++r) {
      if (!covered[r] && matrix.at(r, best_col)) {
        covered[r] = true;
        --remaining;
      }
    }
  }
  return picked;
}

std::size_t propose_sample_size(std::size_t uncovered, double fraction) {
  if (uncovered == 0) return 0;
  // The epsilon keeps 0.3 * 10 from rounding up to 4.
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(uncovered) - 1e-9));
  return std::clamp<std::size_t>(n, 1, uncovered);
}

namespace {

// Partial Fisher-Yates on mt19937_64 draws: reproducible across platforms,
// unlike the standard distributions.
std::vector<FeatureRef> sample_refs(std::vector<FeatureRef> pool, std::size_t n, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return pool;
}

struct WorkingFactor {
  std::string label;
  std::vector<FeatureRef> members;
};

std::size_t find_or_add_factor(std::vector<WorkingFactor>& factors, const std::string& label) {
  const auto key = lower(label);
  for (std::size_t m = 0; m < factors.size(); ++m) {
    if (lower(factors[m].label) == key) return m;
  }
  factors.push_back(WorkingFactor{label, {}});
  return factors.size() - 1;
}

}  // namespace

FactorSet run_pas(const Services& s, const std::string& user_id, std::vector<FeatureSet> feature_sets,
                  const PasConfig& cfg) {
  std::vector<FeatureRef> uncovered;
  for (std::size_t i = 0; i < feature_sets.size(); ++i) {
    feature_sets[i].source_query_index = i;
    for (std::size_t j = 0; j < feature_sets[i].features.size(); ++j) {
      feature_sets[i].features[j].factor_id.reset();
      uncovered.push_back(FeatureRef{i, j});
    }
  }
  const std::size_t total = uncovered.size();
  auto feature_at = [&](const FeatureRef& r) -> const Feature& {
    return feature_sets[r.interaction].features[r.feature];
  };

  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<WorkingFactor> factors;
  std::vector<std::string> prev_labels;
  int rounds = 0;

  while (rounds < cfg.max_rounds && !uncovered.empty()) {
    ++rounds;
    const std::string stage = "pas round " + std::to_string(rounds);

    const auto sample = sample_refs(uncovered, propose_sample_size(uncovered.size(), cfg.propose_sample_fraction), rng);
    std::vector<Feature> sampled;
    for (const auto& r : sample) sampled.push_back(feature_at(r));

    std::vector<std::string> candidates;
    try {
      candidates = propose_factors(s, sampled, prev_labels, cfg.candidates_per_round);
    } catch (const Error& e) {
      throw StageError(stage + ": propose", e.what());
    }

    AssignmentMatrix matrix(uncovered, candidates);
    std::vector<std::optional<std::size_t>> choice(uncovered.size());
    auto errors = parallel_for(uncovered.size(), s.workers(), [&](std::size_t row) {
      choice[row] = assign_feature(s, feature_at(uncovered[row]), candidates);
    });
    for (std::size_t row = 0; row < errors.size(); ++row) {
      if (!errors[row]) continue;
      try {
        std::rethrow_exception(errors[row]);
      } catch (const Error& e) {
        throw StageError(stage + ": assign feature (" + std::to_string(uncovered[row].interaction) + "," +
                             std::to_string(uncovered[row].feature) + ")",
                         e.what());
      }
    }
    for (std::size_t row = 0; row < choice.size(); ++row) {
      if (choice[row]) matrix.set(row, *choice[row]);
    }

    const auto selected = select_factors(matrix, cfg.max_selected_per_round);
    std::vector<bool> now_covered(uncovered.size(), false);
    for (const auto col : selected) {
      const auto before = factors.size();
      const auto m = find_or_add_factor(factors, candidates[col]);
      if (factors.size() > before) prev_labels.push_back(factors[m].label);
      for (std::size_t row = 0; row < uncovered.size(); ++row) {
        if (!now_covered[row] && matrix.at(row, col)) {
          now_covered[row] = true;
          factors[m].members.push_back(uncovered[row]);
        }
      }
    }
    std::vector<FeatureRef> still;
    for (std::size_t row = 0; row < uncovered.size(); ++row) {
      if (!now_covered[row]) still.push_back(uncovered[row]);
    }
    uncovered = std::move(still);

    const double coverage = static_cast<double>(total - uncovered.size()) / static_cast<double>(total);
    if (coverage >= cfg.round_coverage_threshold) break;
  }

  if (!uncovered.empty() && !factors.empty()) {
    std::vector<std::string> labels;
    for (const auto& f : factors) labels.push_back(f.label);
    std::vector<std::optional<std::size_t>> choice(uncovered.size());
    auto errors = parallel_for(uncovered.size(), s.workers(), [&](std::size_t row) {
      choice[row] = assign_feature(s, feature_at(uncovered[row]), labels, true);
    });
    for (const auto& e : errors) {
      if (!e) continue;
      try {
        std::rethrow_exception(e);
      } catch (const Error& err) {
        throw StageError("pas residual pass", err.what());
      }
    }
    std::vector<FeatureRef> still;
    for (std::size_t row = 0; row < uncovered.size(); ++row) {
      if (choice[row]) {
        factors[*choice[row]].members.push_back(uncovered[row]);
      } else {
        still.push_back(uncovered[row]);
      }
    }
    uncovered = std::move(still);
  }

  FactorSet out;
  out.user_id = user_id;
  out.rounds = rounds;
  for (std::size_t m = 0; m < factors.size(); ++m) {
    if (factors[m].members.empty()) continue;
    Factor f;
    f.factor_id = "F" + std::to_string(out.factors.size() + 1);
    f.label = factors[m].label;
    f.members = factors[m].members;
    std::sort(f.members.begin(), f.members.end());
    for (const auto& r : f.members) feature_sets[r.interaction].features[r.feature].factor_id = f.factor_id;
    out.factors.push_back(std::move(f));
  }
  std::sort(uncovered.begin(), uncovered.end());
  out.residual = std::move(uncovered);
  out.coverage_fraction =
      total == 0 ? 0.0 : static_cast<double>(total - out.residual.size()) / static_cast<double>(total);
  out.feature_sets = std::move(feature_sets);
  return out;
}

std::vector<InfluenceJudgment> judge_influence(const Services& s, const Interaction& interaction,
                                               const FeatureSet& features) {
  if (features.features.empty()) throw Error("judge_influence needs at least one feature");
  Bindings b;
  bind_io(b, s.task, interaction.query, interaction.response);
  b["features"] = numbered_feature_list(features);
  const auto prompt = s.templates.render(TemplateId::factor_statistics, s.task, b);
  const auto result = s.chat(prompt, "factor_statistics");
  const auto parsed = expect<InfluenceList>(parse_structured(SchemaId::influences, result.text));

  const std::size_t n = features.features.size();
  std::vector<std::optional<InfluenceJudgment>> aligned(n);
  for (const auto& item : parsed.items) {
    if (item.feature_index < 0 || static_cast<std::size_t>(item.feature_index) >= n) {
      throw ProtocolError("influence feature_index " + std::to_string(item.feature_index) + " out of range for " +
                          std::to_string(n) + " features");
    }
    auto& slot = aligned[static_cast<std::size_t>(item.feature_index)];
    if (slot) throw ProtocolError("duplicate influence entry for feature " + std::to_string(item.feature_index));
    slot = item.judgment;
  }
  std::vector<InfluenceJudgment> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (!aligned[j]) throw ProtocolError("no influence entry for feature " + std::to_string(j));
    out.push_back(*aligned[j]);
  }
  return out;
}

namespace {

// Interactions in which the factor has at least one feature, each with the
// feature ordinals involved.
std::map<std::size_t, std::vector<std::size_t>> members_by_interaction(const Factor& factor) {
  std::map<std::size_t, std::vector<std::size_t>> out;
  for (const auto& r : factor.members) out[r.interaction].push_back(r.feature);
  return out;
}

}  // namespace

std::optional<std::map<std::string, double>> compute_propensity(const UserHistory& history,
                                                                const std::vector<FeatureSet>& feature_sets,
                                                                const Factor& factor,
                                                                const std::vector<std::string>& class_space) {
  (void)feature_sets;
  if (class_space.empty()) throw DataError("propensity needs a non-empty class space");
  std::map<std::string, int> counts;
  for (const auto& y : class_space) counts[y] = 0;

  int denominator = 0;
  for (const auto& [i, feats] : members_by_interaction(factor)) {
    if (i >= history.interactions.size()) throw DataError("factor references interaction " + std::to_string(i));
    const auto& response = history.interactions[i].response;
    auto it = counts.find(response);
    if (it == counts.end()) {
      throw DataError("interaction " + std::to_string(i) + " response '" + response + "' is outside the class space");
    }
    ++it->second;
    ++denominator;
  }
  if (denominator == 0) return std::nullopt;

  std::map<std::string, double> out;
  for (const auto& [y, c] : counts) out[y] = static_cast<double>(c) / static_cast<double>(denominator);
  return out;
}

FactorStats compute_discrete_stats(const UserHistory& history, const std::vector<FeatureSet>& feature_sets,
                                   const Factor& factor, const std::vector<std::string>& class_space) {
  FactorStats st;
  st.kind = StatsKind::discrete;
  st.propensity = compute_propensity(history, feature_sets, factor, class_space);
  st.coverage = static_cast<int>(members_by_interaction(factor).size());
  return st;
}

FactorStats compute_open_stats(const UserHistory& history, const std::vector<FeatureSet>& feature_sets,
                               const std::vector<std::vector<InfluenceJudgment>>& judgments, const Factor& factor) {
  FactorStats st;
  st.kind = StatsKind::open_ended;
  for (const auto& [i, feats] : members_by_interaction(factor)) {
    if (i >= history.interactions.size() || i >= feature_sets.size()) {
      throw DataError("factor references interaction " + std::to_string(i));
    }
    if (i >= judgments.size() || judgments[i].size() != feature_sets[i].features.size()) {
      throw DataError("judgments not aligned with features of interaction " + std::to_string(i));
    }
    ++st.coverage;
    bool any_influenced = false;
    for (const auto j : feats) {
      const auto& jd = judgments[i].at(j);
      if (!jd.influenced) continue;
      any_influenced = true;
      switch (jd.evaluation.value_or(Polarity::neu)) {
        case Polarity::pos: ++st.polarity_counts.pos; break;
        case Polarity::neu: ++st.polarity_counts.neu; break;
        case Polarity::neg: ++st.polarity_counts.neg; break;
      }
    }
    if (any_influenced) ++st.influence;
  }
  const int total = st.polarity_counts.total();
  if (total > 0) {
    const double d = static_cast<double>(total);
    st.polarity = PolarityShare{st.polarity_counts.pos / d, st.polarity_counts.neu / d, st.polarity_counts.neg / d};
  }
  return st;
}

FactorSet build_user_factors(const Services& s, const UserHistory& history, const PasConfig& cfg) {
  const auto n = history.interactions.size();
  if (n == 0) throw StageError("build_user_factors", "user " + history.user_id + " has an empty history");

  std::vector<FeatureSet> feature_sets(n);
  auto errors = parallel_for(n, s.workers(), [&](std::size_t i) {
    feature_sets[i] = extract_features(s, history.interactions[i], i);
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw StageError("extract_features[interaction " + std::to_string(i) + "]", e.what());
    }
  }

  FactorSet factors = run_pas(s, history.user_id, std::move(feature_sets), cfg);

  if (s.task.effective_stats_kind() == StatsKind::discrete) {
    if (!s.task.class_space) throw StageError("factor statistics", "discrete task without a class space");
    for (auto& f : factors.factors) {
      try {
        f.stats = compute_discrete_stats(history, factors.feature_sets, f, *s.task.class_space);
      } catch (const Error& e) {
        throw StageError("factor statistics[" + f.label + "]", e.what());
      }
    }
    return factors;
  }

  std::vector<std::vector<InfluenceJudgment>> judgments(n);
  errors = parallel_for(n, s.workers(), [&](std::size_t i) {
    if (factors.feature_sets[i].features.empty()) return;
    judgments[i] = judge_influence(s, history.interactions[i], factors.feature_sets[i]);
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw StageError("judge_influence[interaction " + std::to_string(i) + "]", e.what());
    }
  }
  for (auto& f : factors.factors) f.stats = compute_open_stats(history, factors.feature_sets, judgments, f);
  return factors;
}

}  // namespace rpm
