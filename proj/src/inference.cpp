#include "rpm/inference.hpp"

#include <algorithm>
#include <cctype>

#include "rpm/error.hpp"
#include "rpm/memory.hpp"
#include "rpm/prompt_text.hpp"

namespace rpm {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

UserState::UserState(FactorSet factors, ReasoningMemory memory)
    : factors_(std::move(factors)), memory_(std::move(memory)) {}

const std::vector<std::vector<double>>& UserState::query_embeddings(const Services& s) const {
  std::lock_guard lock(mu_);
  if (!query_embeddings_) {
    std::vector<std::string> queries;
    for (const auto& ex : memory_.examples) queries.push_back(ex.query);
    query_embeddings_ = embed_all(s, queries, "embed_memory_queries");
  }
  return *query_embeddings_;
}

std::optional<std::string> resolve_factor_label(const std::vector<std::string>& cited, const FactorSet& factors) {
  for (const auto& entry : cited) {
    std::size_t start = 0;
    while (start <= entry.size()) {
      auto comma = entry.find(',', start);
      if (comma == std::string::npos) comma = entry.size();
      auto label = trim(entry.substr(start, comma - start));
      // "3. Methodology" -> "Methodology"
      std::size_t digits = 0;
      while (digits < label.size() && std::isdigit(static_cast<unsigned char>(label[digits]))) ++digits;
      if (digits > 0 && digits < label.size() && (label[digits] == '.' || label[digits] == ')')) {
        label = trim(label.substr(digits + 1));
      }
      const auto key = lower(label);
      for (const auto& f : factors.factors) {
        if (lower(f.label) == key || lower(f.factor_id) == key) return f.factor_id;
      }
      start = comma + 1;
    }
  }
  return std::nullopt;
}

TargetFeatures extract_target_features(const Services& s, const std::string& query, const FactorSet& factors) {
  std::string guidance =
      "\nThis user's factors are listed below. For each feature also give the factor it belongs to in a \"factor\" "
      "field, written exactly as listed, or \"none\" if no factor fits.\nFactors:";
  if (factors.factors.empty()) {
    guidance += " (none)";
  } else {
    for (const auto& f : factors.factors) guidance += "\n- " + f.label;
  }
  guidance += "\n";

  Bindings b;
  bind_io(b, s.task, query, std::nullopt);
  b["factor_guidance"] = guidance;
  const auto prompt = s.templates.render(TemplateId::feature_extraction, s.task, b);
  const auto result = s.chat(prompt, "target_feature_extraction");
  const auto parsed = std::get<FeatureList>(parse_structured(SchemaId::features, result.text));

  TargetFeatures out;
  for (const auto& f : parsed.features) {
    Feature feature{f.name, f.context, resolve_factor_label(f.factor_labels, factors)};
    if (!feature.factor_id) {
      bool declined = true;
      for (const auto& l : f.factor_labels) {
        const auto t = lower(trim(l));
        if (!t.empty() && t != "none" && t != "unassigned" && t != "n/a") declined = false;
      }
      if (!declined) out.flags.push_back(std::string(kFlagUnknownFactorLabel) + ": " + feature.name);
    }
    out.features.features.push_back(std::move(feature));
  }
  return out;
}

NormalizedAnswer normalize_answer(const std::string& raw, const TaskProfile& task) {
  const auto trimmed = trim(raw);
  if (task.output_mode == OutputMode::free_text || !task.class_space) {
    return {trimmed, trimmed.empty()};
  }
  const auto& classes = *task.class_space;
  const auto text = lower(trimmed);
  for (const auto& c : classes) {
    if (lower(c) == text) return {c, false};
  }

  // Earliest class token bounded by non-word characters; at equal positions
  // the longer class wins ("dark comedy" over "comedy").
  std::size_t best_pos = std::string::npos;
  const std::string* best = nullptr;
  for (const auto& c : classes) {
    const auto needle = lower(c);
    if (needle.empty()) continue;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
      const bool left = pos == 0 || !is_word_char(text[pos - 1]);
      const auto end = pos + needle.size();
      const bool right = end >= text.size() || !is_word_char(text[end]);
      if (!left || !right) continue;
      if (pos < best_pos || (pos == best_pos && needle.size() > best->size())) {
        best_pos = pos;
        best = &c;
      }
      break;
    }
  }
  if (best) return {*best, false};

  if (task.output_mode == OutputMode::regression_label) {
    for (std::size_t i = 0; i < text.size();) {
      if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      const auto number = text.substr(i, j - i);
      for (const auto& c : classes) {
        if (c == number) return {c, false};
      }
      i = j;
    }
  }
  return {"", true};
}

std::string output_format(const TaskProfile& task, bool with_reasoning) {
  if (with_reasoning) return "{ \"reasoning\": \"\", \"" + task.answer_field + "\": \"\" }";
  return "{ \"" + task.answer_field + "\": \"\" }";
}

std::string format_exemplars(const std::vector<const ReasoningExample*>& exemplars, const FactorSet& factors,
                             const TaskProfile& task) {
  if (exemplars.empty()) return "(none)";
  const auto in = task.input_name.empty() ? std::string("Input") : task.input_name;
  const auto out_name = task.output_name.empty() ? std::string("Output") : task.output_name;
  std::string out;
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    const auto& ex = *exemplars[i];
    out += "\n\nExample " + std::to_string(i + 1) + ":";
    out += "\n" + in + ": " + ex.query;
    out += "\nFeatures: " + annotated_feature_list(ex.features, factors);
    out += "\nReasoning: " + ex.reasoning;
    out += "\n" + out_name + ": " + ex.response;
  }
  return out;
}

Generation generate(const Services& s, const std::string& query, const FeatureSet& target_features,
                    const FactorSet& factors, const std::vector<const ReasoningExample*>& exemplars,
                    bool with_reasoning) {
  Bindings b;
  bind_io(b, s.task, query, std::nullopt);
  b["reasoning_examples"] = format_exemplars(exemplars, factors, s.task);
  b["factors"] = factor_summary(factors);
  b["features"] = annotated_feature_list(target_features, factors);
  b["output_format"] = output_format(s.task, with_reasoning);
  const auto prompt = s.templates.render(TemplateId::reasoning_aligned_generation, s.task, b);
  const auto result = s.chat(prompt, "generation");

  SchemaOptions opts;
  opts.answer_field = s.task.answer_field;
  opts.require_reasoning = with_reasoning;
  const auto parsed = std::get<GenerationOutput>(parse_structured(SchemaId::generation, result.text, opts));

  Generation g;
  g.reasoning = parsed.reasoning.value_or("");
  g.raw_answer = parsed.answer;
  const auto norm = normalize_answer(parsed.answer, s.task);
  g.answer = norm.answer;
  g.answer_error = norm.error;
  return g;
}

RetrievalResult retrieve(const Services& s, const UserState& user, const std::string& query,
                         const FeatureSet& target_features, const RetrievalConfig& cfg) {
  const auto& memory = user.memory();
  auto embed_one = [&](const std::string& text, const std::string& purpose) {
    auto r = s.embed({text}, purpose);
    return std::move(r.vectors.front());
  };

  switch (cfg.strategy) {
    case RetrievalStrategy::random:
      return retrieve_random(memory.examples.size(), cfg.k, cfg.seed ^ fnv1a(query));
    case RetrievalStrategy::bm25:
      return retrieve_bm25(memory, query, cfg.k);
    case RetrievalStrategy::query_cosine: {
      const auto& stored = user.query_embeddings(s);
      return retrieve_cosine(stored, embed_one(query, "embed_target_query"), cfg.k);
    }
    case RetrievalStrategy::feature_cosine:
      return retrieve_feature_cosine(memory, embed_one(concat_feature_text(target_features), "embed_target"), cfg.k);
    case RetrievalStrategy::feature_level: {
      if (target_features.features.empty()) {
        return retrieve_feature_level(memory, {}, embed_one(kEmptyFeaturesSentinel, "embed_target"), cfg.k);
      }
      std::vector<std::string> texts;
      for (const auto& f : target_features.features) texts.push_back(feature_text(f));
      const auto vectors = embed_all(s, texts, "embed_target_features");
      return retrieve_feature_level(memory, vectors, {}, cfg.k);
    }
    case RetrievalStrategy::two_stage:
      return retrieve_two_stage(memory, factor_ids(target_features),
                                embed_one(concat_feature_text(target_features), "embed_target"), cfg.k,
                                cfg.two_stage_pool_multiplier);
  }
  throw Error("unknown retrieval strategy");
}

namespace {

void personalize_steps(const Services& s, const UserState& user, const std::string& query,
                       const InferenceConfig& cfg, PredictionRecord& rec) {
  TargetFeatures target;
  try {
    target = extract_target_features(s, query, user.factors());
  } catch (const Error& e) {
    throw StageError("extract_target_features", e.what());
  }
  rec.target_features = target.features;
  rec.flags = target.flags;

  RetrievalResult hits;
  try {
    hits = retrieve(s, user, query, rec.target_features, cfg.retrieval);
  } catch (const Error& e) {
    throw StageError("retrieve", e.what());
  }
  rec.retrieved = hits.items;
  rec.flags.insert(rec.flags.end(), hits.flags.begin(), hits.flags.end());

  // Best match last, right before the target.
  std::vector<const ReasoningExample*> exemplars;
  for (auto it = rec.retrieved.rbegin(); it != rec.retrieved.rend(); ++it) {
    exemplars.push_back(&user.memory().examples.at(it->index));
  }

  Generation g;
  try {
    g = generate(s, query, rec.target_features, user.factors(), exemplars, cfg.target_reasoning);
  } catch (const Error& e) {
    throw StageError("generate", e.what());
  }
  rec.reasoning = g.reasoning;
  rec.answer = g.answer;
  rec.raw_answer = g.raw_answer;
  rec.answer_error = g.answer_error;
  if (g.answer_error) rec.flags.push_back(kFlagAnswerError);
}

}  // namespace

PredictionRecord personalize(const Services& s, const UserState& user, const std::string& query,
                             const InferenceConfig& cfg) {
  PredictionRecord rec;
  rec.target_query = query;
  Ledger calls;
  Services local = s;
  local.sink = &calls;
  // Calls already made still count against the caller when a later step
  // fails.
  auto forward = [&] {
    if (s.sink) {
      for (const auto& e : calls.entries()) s.sink->append(e);
    }
  };
  try {
    personalize_steps(local, user, query, cfg, rec);
  } catch (...) {
    forward();
    throw;
  }
  forward();
  rec.ledger = calls.entries();
  return rec;
}

PredictionRecord zero_shot(const Services& s, const std::string& query) {
  PredictionRecord rec;
  rec.target_query = query;
  Bindings b;
  bind_io(b, s.task, query, std::nullopt);
  b["output_format"] = output_format(s.task, false);
  try {
    const auto prompt = s.templates.render(TemplateId::zero_shot_generation, s.task, b);
    const auto result = s.chat(prompt, "zero_shot");
    rec.ledger.push_back(result.entry);
    SchemaOptions opts;
    opts.answer_field = s.task.answer_field;
    opts.require_reasoning = false;
    const auto parsed = std::get<GenerationOutput>(parse_structured(SchemaId::generation, result.text, opts));
    rec.raw_answer = parsed.answer;
  } catch (const Error& e) {
    throw StageError("zero_shot", e.what());
  }
  const auto norm = normalize_answer(rec.raw_answer, s.task);
  rec.answer = norm.answer;
  rec.answer_error = norm.error;
  if (norm.error) rec.flags.push_back(kFlagAnswerError);
  return rec;
}

}  // namespace rpm
