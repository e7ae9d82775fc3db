#include "rpm/memory.hpp"

#include <algorithm>
#include <cctype>

#include "rpm/error.hpp"
#include "rpm/parallel.hpp"
#include "rpm/prompt_text.hpp"

namespace rpm {

std::string construct_reasoning(const Services& s, const Interaction& interaction, const FeatureSet& features,
                                const FactorSet& factors) {
  Bindings b;
  bind_io(b, s.task, interaction.query, interaction.response);
  b["features"] = annotated_feature_list(features, factors);
  b["factors"] = factor_summary(factors);
  const auto prompt = s.templates.render(TemplateId::reasoning_construction, s.task, b);
  const auto result = s.chat(prompt, "reasoning_construction");
  auto parsed = std::get<ReasoningText>(parse_structured(SchemaId::reasoning, result.text));
  if (parsed.reasoning.empty()) throw ProtocolError("empty reasoning");
  return parsed.reasoning;
}

bool reasoning_leaks_response(const std::string& reasoning, const std::string& response) {
  auto lower = [](std::string t) {
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    return t;
  };
  const auto needle = lower(response);
  if (needle.find_first_not_of(" \t\r\n") == std::string::npos) return false;
  return lower(reasoning).find(needle) != std::string::npos;
}

std::vector<std::vector<double>> embed_all(const Services& s, const std::vector<std::string>& texts,
                                           const std::string& purpose) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += kEmbedBatch) {
    const auto end = std::min(texts.size(), start + kEmbedBatch);
    std::vector<std::string> batch(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                   texts.begin() + static_cast<std::ptrdiff_t>(end));
    auto result = s.embed(batch, purpose);
    for (auto& v : result.vectors) out.push_back(std::move(v));
  }
  return out;
}

MemoryBuild build_memory(const Services& s, const UserHistory& history, const FactorSet& factors,
                         const std::string& built_at) {
  const auto n = history.interactions.size();
  if (factors.feature_sets.size() != n) {
    throw StageError("build_memory", "factor set covers " + std::to_string(factors.feature_sets.size()) +
                                         " interactions, history has " + std::to_string(n));
  }

  std::vector<std::string> reasoning(n);
  auto errors = parallel_for(n, s.workers(), [&](std::size_t i) {
    reasoning[i] = construct_reasoning(s, history.interactions[i], factors.feature_sets[i], factors);
  });
  std::vector<std::string> failures;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      failures.push_back("interaction " + std::to_string(i) + ": " + e.what());
    }
  }
  if (!failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " of " + std::to_string(n) + " reasoning paths failed";
    for (const auto& f : failures) msg += "; " + f;
    throw StageError("construct_reasoning", msg);
  }

  MemoryBuild out;
  out.memory.user_id = history.user_id;
  out.memory.provenance.chat_model = s.gateway.config().model_id;
  out.memory.provenance.embed_model = s.gateway.config().embed_model_id;
  out.memory.provenance.built_at = built_at;

  std::vector<std::string> concat;
  std::vector<std::string> single;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& interaction = history.interactions[i];
    ReasoningExample ex;
    ex.query = interaction.query;
    ex.features = factors.feature_sets[i];
    ex.reasoning = reasoning[i];
    ex.response = interaction.response;
    if (s.task.output_mode == OutputMode::free_text && reasoning_leaks_response(ex.reasoning, ex.response)) {
      out.leaked.push_back(i);
    }
    concat.push_back(concat_feature_text(ex.features));
    for (const auto& f : ex.features.features) single.push_back(feature_text(f));
    out.memory.examples.push_back(std::move(ex));
  }

  try {
    auto sample_vectors = embed_all(s, concat, "embed_memory");
    auto feature_vectors = embed_all(s, single, "embed_memory_features");
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto& ex = out.memory.examples[i];
      ex.embedding = std::move(sample_vectors[i]);
      for (std::size_t j = 0; j < ex.features.features.size(); ++j) {
        ex.feature_embeddings.push_back(std::move(feature_vectors[next++]));
      }
    }
  } catch (const Error& e) {
    throw StageError("embed_memory", e.what());
  }
  out.memory.provenance.embed_dim = n > 0 ? out.memory.examples.front().embedding->size() : 0;
  return out;
}

}  // namespace rpm
