#include "rpm/gateway.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

#include "rpm/error.hpp"

namespace rpm {

using nlohmann::json;

std::string to_string(GatewayMode m) {
  switch (m) {
    case GatewayMode::live: return "live";
    case GatewayMode::record: return "record";
    case GatewayMode::replay: return "replay";
  }
  return "live";
}

std::optional<GatewayMode> gateway_mode_from_string(const std::string& s) {
  if (s == "live") return GatewayMode::live;
  if (s == "record") return GatewayMode::record;
  if (s == "replay") return GatewayMode::replay;
  return std::nullopt;
}

void to_json(json& j, const BackendConfig& v) {
  j = json{{"base_url", v.base_url},
           {"model_id", v.model_id},
           {"embed_model_id", v.embed_model_id},
           {"api_key_env", v.api_key_env},
           {"temperature", v.temperature},
           {"max_retries", v.max_retries},
           {"max_parallel", v.max_parallel},
           {"mode", to_string(v.mode)},
           {"replay_dir", v.replay_dir},
           {"prompt_price_per_mtok", v.prompt_price_per_mtok},
           {"completion_price_per_mtok", v.completion_price_per_mtok},
           {"embed_price_per_mtok", v.embed_price_per_mtok},
           {"backoff_base_ms", v.backoff_base_ms},
           {"backoff_max_ms", v.backoff_max_ms},
           {"timeout_s", v.timeout_s},
           {"embed_dim", v.embed_dim}};
}

void from_json(const json& j, BackendConfig& v) {
  BackendConfig d;
  v.base_url = j.value("base_url", d.base_url);
  v.model_id = j.value("model_id", d.model_id);
  v.embed_model_id = j.value("embed_model_id", d.embed_model_id);
  v.api_key_env = j.value("api_key_env", d.api_key_env);
  v.temperature = j.value("temperature", d.temperature);
  v.max_retries = j.value("max_retries", d.max_retries);
  v.max_parallel = j.value("max_parallel", d.max_parallel);
  const auto mode = j.value("mode", to_string(d.mode));
  auto m = gateway_mode_from_string(mode);
  if (!m) throw ConfigError("unknown backend mode '" + mode + "'");
  v.mode = *m;
  v.replay_dir = j.value("replay_dir", d.replay_dir);
  v.prompt_price_per_mtok = j.value("prompt_price_per_mtok", d.prompt_price_per_mtok);
  v.completion_price_per_mtok = j.value("completion_price_per_mtok", d.completion_price_per_mtok);
  v.embed_price_per_mtok = j.value("embed_price_per_mtok", d.embed_price_per_mtok);
  v.backoff_base_ms = j.value("backoff_base_ms", d.backoff_base_ms);
  v.backoff_max_ms = j.value("backoff_max_ms", d.backoff_max_ms);
  v.timeout_s = j.value("timeout_s", d.timeout_s);
  v.embed_dim = j.value("embed_dim", d.embed_dim);
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream out;
  out << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) out << std::setw(2) << static_cast<int>(digest[i]);
  return out.str();
}

ReplayStore::ReplayStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

// Keys hash the canonical (sorted-key, compact) JSON of the causal inputs.
std::string ReplayStore::chat_key(const std::string& model_id, const std::string& prompt, double temperature) {
  json canon = {{"kind", "chat"}, {"model", model_id}, {"params", {{"temperature", temperature}}}, {"prompt", prompt}};
  return sha256_hex(canon.dump());
}

std::string ReplayStore::embed_key(const std::string& model_id, const std::vector<std::string>& texts) {
  json canon = {{"kind", "embed"}, {"model", model_id}, {"input", texts}};
  return sha256_hex(canon.dump());
}

std::optional<json> ReplayStore::load(const std::string& key) const {
  const auto path = dir_ / (key + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("corrupt replay record " + path.string() + ": " + e.what());
  }
}

void ReplayStore::save(const std::string& key, const json& record) const {
  std::filesystem::create_directories(dir_);
  const auto path = dir_ / (key + ".json");
  const auto tmp = dir_ / (key + ".json.tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write replay record " + tmp.string());
    out << record.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void LedgerTotals::add(const CallLedgerEntry& e) {
  ++calls;
  prompt_tokens += e.prompt_tokens;
  completion_tokens += e.completion_tokens;
  cost_usd += e.cost_usd;
  latency_ms += e.latency_ms;
}

LedgerTotals sum_entries(const std::vector<CallLedgerEntry>& entries) {
  // Entries arrive in thread-scheduling order; summing the sorted values keeps
  // the floating-point totals identical from run to run.
  LedgerTotals t;
  std::vector<double> costs, latencies;
  for (const auto& e : entries) {
    ++t.calls;
    t.prompt_tokens += e.prompt_tokens;
    t.completion_tokens += e.completion_tokens;
    costs.push_back(e.cost_usd);
    latencies.push_back(e.latency_ms);
  }
  std::sort(costs.begin(), costs.end());
  std::sort(latencies.begin(), latencies.end());
  for (double c : costs) t.cost_usd += c;
  for (double l : latencies) t.latency_ms += l;
  return t;
}

void Ledger::append(const CallLedgerEntry& e) {
  std::lock_guard lock(mu_);
  entries_.push_back(e);
}

std::vector<CallLedgerEntry> Ledger::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

LedgerTotals Ledger::totals() const {
  std::lock_guard lock(mu_);
  return sum_entries(entries_);
}

void Ledger::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

namespace {

class PermitGuard {
 public:
  explicit PermitGuard(std::counting_semaphore<4096>& sem) : sem_(sem) { sem_.acquire(); }
  ~PermitGuard() { sem_.release(); }
  PermitGuard(const PermitGuard&) = delete;
  PermitGuard& operator=(const PermitGuard&) = delete;

 private:
  std::counting_semaphore<4096>& sem_;
};

bool retryable_status(int status) { return status == 429 || status >= 500; }

double jitter_ms(double upper) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uniform_real_distribution<double> dist(0.0, std::max(upper, 0.0));
  return dist(rng);
}

std::int64_t usage_field(const json& response, const char* key) {
  auto usage = response.find("usage");
  if (usage == response.end() || !usage->is_object()) return 0;
  auto it = usage->find(key);
  if (it == usage->end() || !it->is_number_integer()) return 0;
  return std::max<std::int64_t>(0, it->get<std::int64_t>());
}

}  // namespace

Gateway::Gateway(BackendConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      in_flight_(std::clamp(config_.max_parallel, 1, 4096)) {
  if (config_.max_parallel <= 0) throw ConfigError("max_parallel must be positive");
  if (config_.max_retries < 0) throw ConfigError("max_retries must be non-negative");
  if (config_.mode != GatewayMode::live) {
    if (config_.replay_dir.empty()) throw ConfigError("replay_dir required in record/replay mode");
    store_.emplace(config_.replay_dir);
  }
  if (config_.mode != GatewayMode::replay && !transport_) {
    throw ConfigError("a transport is required in live/record mode");
  }
}

std::size_t Gateway::embed_dim() const {
  if (config_.embed_dim > 0) return config_.embed_dim;
  std::lock_guard lock(dim_mu_);
  return observed_dim_;
}

HttpResponse Gateway::send_with_retry(const std::string& path, const std::string& body) {
  HttpHeaders headers{{"Content-Type", "application/json"}};
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      headers.emplace_back("Authorization", std::string("Bearer ") + key);
    }
  }

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double base = std::min(config_.backoff_max_ms, config_.backoff_base_ms * std::pow(2.0, attempt - 1));
      const double wait = base + jitter_ms(config_.backoff_base_ms);
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(wait));
    }
    try {
      HttpResponse resp;
      {
        PermitGuard permit(in_flight_);
        resp = transport_->post(path, body, headers);
      }
      if (resp.status >= 200 && resp.status < 300) return resp;
      if (!retryable_status(resp.status)) {
        throw ConfigError("HTTP " + std::to_string(resp.status) + " from " + path + ": " + resp.body);
      }
      last_error = "HTTP " + std::to_string(resp.status);
    } catch (const TransportError& e) {
      last_error = e.what();
    }
  }
  throw RetryExhaustedError("request to " + path + " failed after " + std::to_string(config_.max_retries + 1) +
                            " attempts: " + last_error);
}

json Gateway::fetch(const std::string& key, const std::string& kind, const std::string& path, const json& request,
                    bool& replayed) {
  replayed = false;
  if (config_.mode == GatewayMode::replay) {
    auto record = store_->load(key);
    if (!record) throw ReplayMissError(key);
    replayed = true;
    return record->at("response");
  }
  const auto resp = send_with_retry(path, request.dump());
  json body;
  try {
    body = json::parse(resp.body);
  } catch (const json::exception& e) {
    throw Error("malformed " + kind + " response body: " + e.what());
  }
  if (config_.mode == GatewayMode::record) {
    store_->save(key, json{{"key", key}, {"kind", kind}, {"request", request}, {"response", body}});
  }
  return body;
}

ChatResult Gateway::chat_complete(const std::string& prompt, const std::string& purpose) {
  const auto started = std::chrono::steady_clock::now();
  const json request = {{"model", config_.model_id},
                        {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                        {"temperature", config_.temperature}};
  const auto key = ReplayStore::chat_key(config_.model_id, prompt, config_.temperature);

  bool replayed = false;
  const json body = fetch(key, "chat", "/v1/chat/completions", request, replayed);

  std::string text;
  try {
    text = body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(std::string("chat response missing choices[0].message.content: ") + e.what());
  }

  ChatResult out;
  out.text = std::move(text);
  out.entry.purpose = purpose;
  out.entry.prompt_tokens = usage_field(body, "prompt_tokens");
  out.entry.completion_tokens = usage_field(body, "completion_tokens");
  out.entry.cost_usd = (static_cast<double>(out.entry.prompt_tokens) * config_.prompt_price_per_mtok +
                        static_cast<double>(out.entry.completion_tokens) * config_.completion_price_per_mtok) /
                       1e6;
  out.entry.replayed = replayed;
  out.entry.latency_ms =
      replayed ? 0.0
               : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  ledger_.append(out.entry);
  return out;
}

EmbedResult Gateway::embed(const std::vector<std::string>& texts, const std::string& purpose) {
  if (texts.empty()) throw Error("embed requires at least one input text");
  const auto started = std::chrono::steady_clock::now();
  const json request = {{"model", config_.embed_model_id}, {"input", texts}};
  const auto key = ReplayStore::embed_key(config_.embed_model_id, texts);

  bool replayed = false;
  const json body = fetch(key, "embed", "/v1/embeddings", request, replayed);

  EmbedResult out;
  out.vectors.resize(texts.size());
  std::vector<bool> filled(texts.size(), false);
  try {
    const auto& data = body.at("data");
    if (data.size() != texts.size()) {
      throw Error("embedding response has " + std::to_string(data.size()) + " vectors for " +
                  std::to_string(texts.size()) + " inputs");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t idx = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
      if (idx >= texts.size() || filled[idx]) throw Error("embedding response has a bad index");
      out.vectors[idx] = data[i].at("embedding").get<std::vector<double>>();
      filled[idx] = true;
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed embedding response: ") + e.what());
  }

  const std::size_t dim = out.vectors.front().size();
  for (const auto& v : out.vectors) {
    if (v.size() != dim || dim == 0) throw Error("embedding response has non-uniform dimensionality");
  }
  if (config_.embed_dim > 0 && dim != config_.embed_dim) {
    throw ConfigError("embedding dimension " + std::to_string(dim) + " differs from declared " +
                      std::to_string(config_.embed_dim));
  }
  {
    std::lock_guard lock(dim_mu_);
    if (observed_dim_ == 0) observed_dim_ = dim;
  }

  out.entry.purpose = purpose;
  out.entry.prompt_tokens = usage_field(body, "prompt_tokens");
  out.entry.cost_usd = static_cast<double>(out.entry.prompt_tokens) * config_.embed_price_per_mtok / 1e6;
  out.entry.replayed = replayed;
  out.entry.latency_ms =
      replayed ? 0.0
               : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  ledger_.append(out.entry);
  return out;
}

}  // namespace rpm
