#pragma once

// Stage 2: a reasoning path per past interaction, embedded and stored as the
// user's reasoning memory.

#include <cstddef>
#include <string>
#include <vector>

#include "rpm/domain.hpp"
#include "rpm/factors.hpp"

namespace rpm {

std::string construct_reasoning(const Services& s, const Interaction& interaction, const FeatureSet& features,
                                const FactorSet& factors);

// True when a free-text gold response shows up verbatim (case-insensitive)
// in the reasoning. Short class labels would match by accident, so callers
// only audit free-text tasks.
bool reasoning_leaks_response(const std::string& reasoning, const std::string& response);

struct MemoryBuild {
  ReasoningMemory memory;
  // Interaction ordinals whose reasoning repeats the gold response.
  std::vector<std::size_t> leaked;
};

// Embedding requests are split into batches of this many texts.
inline constexpr std::size_t kEmbedBatch = 64;

// Embeds texts in order, batch by batch.
std::vector<std::vector<double>> embed_all(const Services& s, const std::vector<std::string>& texts,
                                           const std::string& purpose);

// One example per interaction, in history order, with the concatenated
// feature embedding and the per-feature embeddings filled in.
MemoryBuild build_memory(const Services& s, const UserHistory& history, const FactorSet& factors,
                         const std::string& built_at);

}  // namespace rpm
