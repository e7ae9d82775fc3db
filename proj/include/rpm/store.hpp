#pragma once

// On-disk layout for per-user artifacts under one root directory:
//
//   factors/<user>.json        FactorSet
//   memory/<user>.jsonl        one ReasoningExample per line
//   memory/<user>.meta.json    MemoryProvenance
//
// Saving a memory over an existing one moves the old pair aside as
// <user>.<n>.jsonl / <user>.<n>.meta.json instead of overwriting it.

#include <filesystem>
#include <string>

#include "rpm/domain.hpp"

namespace rpm {

// Characters outside [A-Za-z0-9._-] become '_'.
std::string file_stem(const std::string& user_id);

// Writes via a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

std::string memory_to_jsonl(const ReasoningMemory& memory);
// Throws LoadError naming the 1-based line of the first bad record.
ReasoningMemory memory_from_jsonl(const std::string& user_id, const std::string& text,
                                  const MemoryProvenance& provenance);

class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root);

  std::filesystem::path factors_path(const std::string& user_id) const;
  std::filesystem::path memory_path(const std::string& user_id) const;
  std::filesystem::path meta_path(const std::string& user_id) const;

  void save_factors(const FactorSet& factors) const;
  FactorSet load_factors(const std::string& user_id) const;

  // Returns the version assigned to the snapshot (1 for the first build).
  int save_memory(const ReasoningMemory& memory) const;
  ReasoningMemory load_memory(const std::string& user_id) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

}  // namespace rpm
