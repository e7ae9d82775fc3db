#pragma once

// Top-k selection of reasoning examples. Every strategy orders results by
// score, highest first; equal scores put the more recent interaction (larger
// index) first.

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "rpm/domain.hpp"

namespace rpm {

struct RetrievalResult {
  std::vector<ScoredExample> items;
  std::vector<std::string> flags;
};

inline constexpr const char* kFlagKExceedsMemory = "k_exceeds_memory";
inline constexpr const char* kFlagEmptyTargetFeatures = "empty_target_features";

// Throws Error on dimension mismatch. A zero vector has cosine 0 with
// everything.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

// Strict weak order used for every ranking.
bool ranks_before(const ScoredExample& a, const ScoredExample& b);

// Sorts by ranks_before and keeps the first k; flags k > scored.size().
RetrievalResult take_top_k(std::vector<ScoredExample> scored, int k);

// Cosine between target and stored[i] for every i.
RetrievalResult retrieve_cosine(const std::vector<std::vector<double>>& stored, const std::vector<double>& target,
                                int k);

// Default strategy: target concatenated-feature embedding against each
// example's stored embedding.
RetrievalResult retrieve_feature_cosine(const ReasoningMemory& memory, const std::vector<double>& target_embedding,
                                        int k);

// Score of example i = sum over target features of the best cosine against
// any feature of i; examples without features score 0. With no target
// features the concatenated embeddings are compared instead (flagged).
// cosine_calls, when given, is incremented once per cosine evaluated.
RetrievalResult retrieve_feature_level(const ReasoningMemory& memory,
                                       const std::vector<std::vector<double>>& target_feature_embeddings,
                                       const std::vector<double>& target_embedding, int k,
                                       std::size_t* cosine_calls = nullptr);

std::set<std::string> factor_ids(const FeatureSet& features);

// |a ∩ b| / |a ∪ b|, and 0 when both are empty.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

// Stage 1 of two-stage retrieval. Candidates are grouped by Jaccard score;
// the best group is always kept whole, then lower groups are added until the
// pool holds at least pool_size examples. Only an added group that overshoots
// is cut, keeping its members that rank first by recency. Returned in rank
// order.
std::vector<std::size_t> two_stage_pool(const ReasoningMemory& memory, const std::set<std::string>& target_factors,
                                        std::size_t pool_size);

RetrievalResult retrieve_two_stage(const ReasoningMemory& memory, const std::set<std::string>& target_factors,
                                   const std::vector<double>& target_embedding, int k, int pool_multiplier);

// Lowercased whitespace tokens.
std::vector<std::string> bm25_tokens(const std::string& text);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Okapi BM25 over the documents, summing over the distinct query terms, with
// idf = ln((N - df + 0.5) / (df + 0.5) + 1).
std::vector<double> bm25_scores(const std::vector<std::string>& documents, const std::string& query,
                                const Bm25Params& params = {});

RetrievalResult retrieve_bm25(const ReasoningMemory& memory, const std::string& query, int k);

// Every example gets a key from mt19937_64(seed); the k largest keys win.
// Scores are the keys scaled to [0, 1).
RetrievalResult retrieve_random(std::size_t memory_size, int k, std::uint64_t seed);

}  // namespace rpm
