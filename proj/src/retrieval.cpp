#include "rpm/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "rpm/error.hpp"

namespace rpm {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw Error("cosine of vectors with dimensions " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

bool ranks_before(const ScoredExample& a, const ScoredExample& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.index > b.index;
}

RetrievalResult take_top_k(std::vector<ScoredExample> scored, int k) {
  if (k < 0) throw Error("k must be non-negative");
  RetrievalResult out;
  const auto want = static_cast<std::size_t>(k);
  if (want > scored.size()) out.flags.push_back(kFlagKExceedsMemory);
  const auto keep = std::min(want, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), ranks_before);
  scored.resize(keep);
  out.items = std::move(scored);
  return out;
}

RetrievalResult retrieve_cosine(const std::vector<std::vector<double>>& stored, const std::vector<double>& target,
                                int k) {
  std::vector<ScoredExample> scored;
  scored.reserve(stored.size());
  for (std::size_t i = 0; i < stored.size(); ++i) scored.push_back({i, cosine(target, stored[i])});
  return take_top_k(std::move(scored), k);
}

namespace {

const std::vector<double>& stored_embedding(const ReasoningMemory& memory, std::size_t i) {
  const auto& e = memory.examples[i].embedding;
  if (!e) throw Error("memory example " + std::to_string(i) + " has no embedding");
  return *e;
}

}  // namespace

RetrievalResult retrieve_feature_cosine(const ReasoningMemory& memory, const std::vector<double>& target_embedding,
                                        int k) {
  std::vector<ScoredExample> scored;
  scored.reserve(memory.examples.size());
  for (std::size_t i = 0; i < memory.examples.size(); ++i) {
    scored.push_back({i, cosine(target_embedding, stored_embedding(memory, i))});
  }
  return take_top_k(std::move(scored), k);
}

RetrievalResult retrieve_feature_level(const ReasoningMemory& memory,
                                       const std::vector<std::vector<double>>& target_feature_embeddings,
                                       const std::vector<double>& target_embedding, int k,
                                       std::size_t* cosine_calls) {
  if (target_feature_embeddings.empty()) {
    auto out = retrieve_feature_cosine(memory, target_embedding, k);
    out.flags.push_back(kFlagEmptyTargetFeatures);
    return out;
  }
  std::vector<ScoredExample> scored;
  scored.reserve(memory.examples.size());
  for (std::size_t i = 0; i < memory.examples.size(); ++i) {
    const auto& ex = memory.examples[i];
    if (ex.feature_embeddings.size() != ex.features.features.size()) {
      throw Error("memory example " + std::to_string(i) + " lacks per-feature embeddings");
    }
    double score = 0.0;
    if (!ex.feature_embeddings.empty()) {
      for (const auto& t : target_feature_embeddings) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& f : ex.feature_embeddings) {
          best = std::max(best, cosine(t, f));
          if (cosine_calls) ++*cosine_calls;
        }
        score += best;
      }
    }
    scored.push_back({i, score});
  }
  return take_top_k(std::move(scored), k);
}

std::set<std::string> factor_ids(const FeatureSet& features) {
  std::set<std::string> out;
  for (const auto& f : features.features) {
    if (f.factor_id) out.insert(*f.factor_id);
  }
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  const auto uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::size_t> two_stage_pool(const ReasoningMemory& memory, const std::set<std::string>& target_factors,
                                        std::size_t pool_size) {
  std::vector<ScoredExample> ranked;
  ranked.reserve(memory.examples.size());
  for (std::size_t i = 0; i < memory.examples.size(); ++i) {
    ranked.push_back({i, jaccard(target_factors, factor_ids(memory.examples[i].features))});
  }
  std::sort(ranked.begin(), ranked.end(), ranks_before);

  std::vector<std::size_t> pool;
  std::size_t g = 0;
  bool first_group = true;
  while (g < ranked.size() && (first_group || pool.size() < pool_size)) {
    std::size_t end = g;
    while (end < ranked.size() && ranked[end].score == ranked[g].score) ++end;
    for (std::size_t i = g; i < end; ++i) {
      if (!first_group && pool.size() >= pool_size) break;
      pool.push_back(ranked[i].index);
    }
    first_group = false;
    g = end;
  }
  return pool;
}

RetrievalResult retrieve_two_stage(const ReasoningMemory& memory, const std::set<std::string>& target_factors,
                                   const std::vector<double>& target_embedding, int k, int pool_multiplier) {
  if (k < 0) throw Error("k must be non-negative");
  if (pool_multiplier < 1) throw Error("pool multiplier must be at least 1");
  const auto pool = two_stage_pool(memory, target_factors, static_cast<std::size_t>(k) * pool_multiplier);
  std::vector<ScoredExample> scored;
  scored.reserve(pool.size());
  for (const auto i : pool) scored.push_back({i, cosine(target_embedding, stored_embedding(memory, i))});
  auto out = take_top_k(std::move(scored), k);
  if (static_cast<std::size_t>(k) > memory.examples.size()) {
    out.flags = {kFlagKExceedsMemory};
  }
  return out;
}

std::vector<std::string> bm25_tokens(const std::string& text) {
  std::string lowered = text;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
  std::istringstream in(lowered);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

std::vector<double> bm25_scores(const std::vector<std::string>& documents, const std::string& query,
                                const Bm25Params& params) {
  const auto n = documents.size();
  std::vector<std::map<std::string, int>> tf(n);
  std::vector<double> len(n, 0.0);
  std::map<std::string, int> df;
  double total_len = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& t : bm25_tokens(documents[i])) ++tf[i][t];
    for (const auto& [t, c] : tf[i]) {
      ++df[t];
      len[i] += c;
    }
    total_len += len[i];
  }
  const double avgdl = n > 0 ? total_len / static_cast<double>(n) : 0.0;

  auto terms = bm25_tokens(query);
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

  std::vector<double> scores(n, 0.0);
  for (const auto& t : terms) {
    auto it = df.find(t);
    if (it == df.end()) continue;
    const double d = it->second;
    const double idf = std::log((static_cast<double>(n) - d + 0.5) / (d + 0.5) + 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto f = tf[i].find(t);
      if (f == tf[i].end()) continue;
      const double freq = f->second;
      const double norm = avgdl > 0.0 ? len[i] / avgdl : 0.0;
      scores[i] += idf * freq * (params.k1 + 1.0) / (freq + params.k1 * (1.0 - params.b + params.b * norm));
    }
  }
  return scores;
}

RetrievalResult retrieve_bm25(const ReasoningMemory& memory, const std::string& query, int k) {
  std::vector<std::string> docs;
  docs.reserve(memory.examples.size());
  for (const auto& ex : memory.examples) docs.push_back(ex.query);
  const auto scores = bm25_scores(docs, query);
  std::vector<ScoredExample> scored;
  for (std::size_t i = 0; i < scores.size(); ++i) scored.push_back({i, scores[i]});
  return take_top_k(std::move(scored), k);
}

RetrievalResult retrieve_random(std::size_t memory_size, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ScoredExample> scored;
  scored.reserve(memory_size);
  // The 53 high bits map exactly onto a double in [0, 1).
  for (std::size_t i = 0; i < memory_size; ++i) {
    scored.push_back({i, static_cast<double>(rng() >> 11) * 0x1.0p-53});
  }
  return take_top_k(std::move(scored), k);
}

}  // namespace rpm
