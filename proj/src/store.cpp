#include "rpm/store.hpp"

#include <fstream>
#include <sstream>

#include "rpm/domain_json.hpp"
#include "rpm/error.hpp"

namespace fs = std::filesystem;

namespace rpm {

std::string file_stem(const std::string& user_id) {
  std::string out = user_id;
  for (auto& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                    c == '_' || c == '-';
    if (!ok) c = '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string memory_to_jsonl(const ReasoningMemory& memory) {
  std::string out;
  for (const auto& ex : memory.examples) {
    out += json(ex).dump();
    out += '\n';
  }
  return out;
}

ReasoningMemory memory_from_jsonl(const std::string& user_id, const std::string& text,
                                  const MemoryProvenance& provenance) {
  ReasoningMemory m;
  m.user_id = user_id;
  m.provenance = provenance;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.examples.push_back(json::parse(line).get<ReasoningExample>());
    } catch (const json::exception& e) {
      throw LoadError("memory line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return m;
}

ArtifactStore::ArtifactStore(fs::path root) : root_(std::move(root)) {}

fs::path ArtifactStore::factors_path(const std::string& user_id) const {
  return root_ / "factors" / (file_stem(user_id) + ".json");
}

fs::path ArtifactStore::memory_path(const std::string& user_id) const {
  return root_ / "memory" / (file_stem(user_id) + ".jsonl");
}

fs::path ArtifactStore::meta_path(const std::string& user_id) const {
  return root_ / "memory" / (file_stem(user_id) + ".meta.json");
}

void ArtifactStore::save_factors(const FactorSet& factors) const {
  write_file_atomic(factors_path(factors.user_id), json(factors).dump(2) + "\n");
}

FactorSet ArtifactStore::load_factors(const std::string& user_id) const {
  const auto path = factors_path(user_id);
  try {
    return json::parse(read_file(path)).get<FactorSet>();
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what(), 0);
  }
}

int ArtifactStore::save_memory(const ReasoningMemory& memory) const {
  const auto current = memory_path(memory.user_id);
  const auto meta = meta_path(memory.user_id);
  const auto stem = file_stem(memory.user_id);
  int version = 1;
  if (fs::exists(current)) {
    int n = 1;
    while (fs::exists(current.parent_path() / (stem + "." + std::to_string(n) + ".jsonl"))) ++n;
    fs::rename(current, current.parent_path() / (stem + "." + std::to_string(n) + ".jsonl"));
    if (fs::exists(meta)) fs::rename(meta, meta.parent_path() / (stem + "." + std::to_string(n) + ".meta.json"));
    version = n + 1;
  }
  MemoryProvenance prov = memory.provenance;
  prov.version = version;
  write_file_atomic(current, memory_to_jsonl(memory));
  json header = prov;
  header["user_id"] = memory.user_id;
  write_file_atomic(meta, header.dump(2) + "\n");
  return version;
}

ReasoningMemory ArtifactStore::load_memory(const std::string& user_id) const {
  const auto meta = meta_path(user_id);
  MemoryProvenance prov;
  try {
    prov = json::parse(read_file(meta)).get<MemoryProvenance>();
  } catch (const json::exception& e) {
    throw LoadError(meta.string() + ": " + e.what(), 0);
  } catch (const Error& e) {
    throw LoadError(e.what(), 0);
  }
  return memory_from_jsonl(user_id, read_file(memory_path(user_id)), prov);
}

}  // namespace rpm
