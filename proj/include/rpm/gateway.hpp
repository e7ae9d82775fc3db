#pragma once

// Every chat-completion and embedding request goes through Gateway. It owns
// the retry policy, the in-flight bound, the cost ledger, and the
// record/replay store used for deterministic runs.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rpm/domain.hpp"

namespace rpm {

enum class GatewayMode { live, record, replay };

std::string to_string(GatewayMode m);
std::optional<GatewayMode> gateway_mode_from_string(const std::string& s);

struct BackendConfig {
  std::string base_url = "https://api.openai.com";
  std::string model_id = "gpt-4o-mini";
  std::string embed_model_id = "text-embedding-3-small";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int max_retries = 3;
  int max_parallel = 4;
  GatewayMode mode = GatewayMode::live;
  std::string replay_dir;
  // USD per million tokens.
  double prompt_price_per_mtok = 0.15;
  double completion_price_per_mtok = 0.60;
  double embed_price_per_mtok = 0.02;
  double backoff_base_ms = 500.0;
  double backoff_max_ms = 8000.0;
  double timeout_s = 120.0;
  // Declared embedding dimensionality; 0 means "whatever the backend returns".
  std::size_t embed_dim = 0;
};

void to_json(nlohmann::json& j, const BackendConfig& v);
void from_json(const nlohmann::json& j, BackendConfig& v);

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class Transport {
 public:
  virtual ~Transport() = default;
  // Throws TransportError when no HTTP response could be obtained.
  virtual HttpResponse post(const std::string& path, const std::string& body, const HttpHeaders& headers) = 0;
};

// Plain HTTP(S) transport. base_url may carry a path prefix
// ("http://host:8000/proxy"), which is prepended to every request path.
class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string base_url, double timeout_s);
  HttpResponse post(const std::string& path, const std::string& body, const HttpHeaders& headers) override;

 private:
  std::string origin_;
  std::string prefix_;
  double timeout_s_;
};

std::string sha256_hex(const std::string& data);

// Content-addressed directory of recorded provider responses: one
// <key>.json file per request, key = SHA-256 of the canonical request.
class ReplayStore {
 public:
  explicit ReplayStore(std::filesystem::path dir);

  static std::string chat_key(const std::string& model_id, const std::string& prompt, double temperature);
  static std::string embed_key(const std::string& model_id, const std::vector<std::string>& texts);

  std::optional<nlohmann::json> load(const std::string& key) const;
  void save(const std::string& key, const nlohmann::json& record) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

struct LedgerTotals {
  std::size_t calls = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double cost_usd = 0.0;
  double latency_ms = 0.0;

  void add(const CallLedgerEntry& e);
};

LedgerTotals sum_entries(const std::vector<CallLedgerEntry>& entries);

class Ledger {
 public:
  void append(const CallLedgerEntry& e);
  std::vector<CallLedgerEntry> entries() const;
  LedgerTotals totals() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<CallLedgerEntry> entries_;
};

struct ChatResult {
  std::string text;
  CallLedgerEntry entry;
};

struct EmbedResult {
  std::vector<std::vector<double>> vectors;
  CallLedgerEntry entry;
};

class Gateway {
 public:
  // transport may be null in replay mode.
  Gateway(BackendConfig config, std::shared_ptr<Transport> transport);

  ChatResult chat_complete(const std::string& prompt, const std::string& purpose);
  EmbedResult embed(const std::vector<std::string>& texts, const std::string& purpose = "embed");

  const BackendConfig& config() const { return config_; }
  Ledger& ledger() { return ledger_; }
  // Declared dimension, or the one observed on the first embedding call.
  std::size_t embed_dim() const;

 private:
  HttpResponse send_with_retry(const std::string& path, const std::string& body);
  nlohmann::json fetch(const std::string& key, const std::string& kind, const std::string& path,
                       const nlohmann::json& request, bool& replayed);

  BackendConfig config_;
  std::shared_ptr<Transport> transport_;
  std::optional<ReplayStore> store_;
  std::counting_semaphore<4096> in_flight_;
  Ledger ledger_;
  mutable std::mutex dim_mu_;
  std::size_t observed_dim_ = 0;
};

}  // namespace rpm
