#include <gtest/gtest.h>

#include <cstdlib>

#include "fake_llm.hpp"
#include "rpm/error.hpp"
#include "rpm/gateway.hpp"

namespace rpm {
namespace {

using testing::fresh_dir;
using testing::ScriptedTransport;
using testing::test_backend;

std::shared_ptr<ScriptedTransport> echo_transport() {
  return std::make_shared<ScriptedTransport>([](const std::string& p) { return "echo:" + p; }, 8);
}

TEST(Gateway, ChatReturnsTextAndLedgerEntry) {
  auto t = echo_transport();
  auto cfg = test_backend();
  cfg.prompt_price_per_mtok = 1.0;
  cfg.completion_price_per_mtok = 2.0;
  Gateway gw(cfg, t);
  const auto r = gw.chat_complete("hello world!", "unit");
  EXPECT_EQ(r.text, "echo:hello world!");
  EXPECT_EQ(r.entry.purpose, "unit");
  EXPECT_EQ(r.entry.prompt_tokens, 3);
  EXPECT_EQ(r.entry.completion_tokens, 4);
  EXPECT_DOUBLE_EQ(r.entry.cost_usd, (3 * 1.0 + 4 * 2.0) / 1e6);
  EXPECT_FALSE(r.entry.replayed);
  EXPECT_EQ(gw.ledger().totals().calls, 1u);
}

TEST(Gateway, RetriesServerErrorsThenSucceeds) {
  auto t = echo_transport();
  t->fail_next({500, 429, 0});
  Gateway gw(test_backend(), t);
  EXPECT_EQ(gw.chat_complete("x", "unit").text, "echo:x");
  EXPECT_EQ(t->chat_calls(), 1);
}

TEST(Gateway, GivesUpAfterMaxRetries) {
  auto t = echo_transport();
  auto cfg = test_backend();
  cfg.max_retries = 2;
  t->fail_next({503, 503, 503, 503});
  Gateway gw(cfg, t);
  EXPECT_THROW(gw.chat_complete("x", "unit"), RetryExhaustedError);
  EXPECT_EQ(gw.ledger().totals().calls, 0u);
}

TEST(Gateway, ClientErrorsAreNotRetried) {
  auto t = echo_transport();
  t->fail_next({401, 500});
  Gateway gw(test_backend(), t);
  EXPECT_THROW(gw.chat_complete("x", "unit"), ConfigError);
  EXPECT_EQ(t->chat_calls(), 0);
  // The queued 500 is still pending: the next call retries past it.
  EXPECT_EQ(gw.chat_complete("x", "unit").text, "echo:x");
}

TEST(Gateway, SendsKeyFromEnvironment) {
  auto t = echo_transport();
  ::setenv("RPM_TEST_API_KEY", "sk-test", 1);
  Gateway gw(test_backend(), t);
  gw.chat_complete("x", "unit");
  bool found = false;
  for (const auto& [k, v] : t->last_headers()) {
    if (k == "Authorization") {
      EXPECT_EQ(v, "Bearer sk-test");
      found = true;
    }
  }
  EXPECT_TRUE(found);
  ::unsetenv("RPM_TEST_API_KEY");
  gw.chat_complete("y", "unit");
  for (const auto& [k, v] : t->last_headers()) EXPECT_NE(k, "Authorization");
}

TEST(Gateway, RecordThenReplay) {
  const auto dir = fresh_dir("gateway_replay");
  auto t = echo_transport();
  {
    Gateway rec(test_backend(GatewayMode::record, dir), t);
    EXPECT_EQ(rec.chat_complete("a prompt", "unit").text, "echo:a prompt");
    EXPECT_EQ(rec.embed({"one", "two"}).vectors.size(), 2u);
  }
  Gateway rep(test_backend(GatewayMode::replay, dir), nullptr);
  const auto r = rep.chat_complete("a prompt", "unit");
  EXPECT_EQ(r.text, "echo:a prompt");
  EXPECT_TRUE(r.entry.replayed);
  EXPECT_EQ(r.entry.latency_ms, 0.0);
  EXPECT_EQ(r.entry.prompt_tokens, 2);
  const auto e = rep.embed({"one", "two"});
  EXPECT_EQ(e.vectors[0], testing::hash_embedding("one", 8));
  EXPECT_EQ(rep.embed_dim(), 8u);
  EXPECT_EQ(t->chat_calls(), 1);

  try {
    rep.chat_complete("never recorded", "unit");
    FAIL() << "expected a replay miss";
  } catch (const ReplayMissError& miss) {
    EXPECT_EQ(miss.key(), ReplayStore::chat_key(rep.config().model_id, "never recorded", 0.0));
  }
  EXPECT_THROW(rep.embed({"two", "one"}), ReplayMissError);
}

TEST(Gateway, ReplayKeysDependOnEveryRequestField) {
  const auto k = ReplayStore::chat_key("m", "p", 0.0);
  EXPECT_EQ(k, ReplayStore::chat_key("m", "p", 0.0));
  EXPECT_NE(k, ReplayStore::chat_key("m2", "p", 0.0));
  EXPECT_NE(k, ReplayStore::chat_key("m", "p ", 0.0));
  EXPECT_NE(k, ReplayStore::chat_key("m", "p", 0.7));
  EXPECT_EQ(k.size(), 64u);
  EXPECT_NE(ReplayStore::embed_key("m", {"a", "b"}), ReplayStore::embed_key("m", {"b", "a"}));
  EXPECT_NE(ReplayStore::embed_key("m", {"ab"}), ReplayStore::embed_key("m", {"a", "b"}));
}

TEST(Gateway, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Gateway, RejectsDeclaredDimensionMismatch) {
  auto t = echo_transport();
  auto cfg = test_backend();
  cfg.embed_dim = 16;
  Gateway gw(cfg, t);
  EXPECT_THROW(gw.embed({"x"}), ConfigError);
}

TEST(Gateway, ConstructorChecksMode) {
  EXPECT_THROW(Gateway(test_backend(GatewayMode::replay), nullptr), ConfigError);
  EXPECT_THROW(Gateway(test_backend(GatewayMode::live), nullptr), ConfigError);
}

TEST(Gateway, BackendConfigJsonRoundTrip) {
  auto cfg = test_backend(GatewayMode::record, "/tmp/x");
  cfg.embed_dim = 12;
  const nlohmann::json j = cfg;
  const auto back = j.get<BackendConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Gateway, LedgerTotalsIgnoreAppendOrder) {
  std::vector<CallLedgerEntry> a = {{"x", 1, 2, 0.0, 0.1, false}, {"y", 3, 4, 0.0, 1e-17, false},
                                    {"z", 5, 6, 0.0, 0.2, false}};
  auto b = a;
  std::swap(b[0], b[2]);
  const auto ta = sum_entries(a);
  const auto tb = sum_entries(b);
  EXPECT_EQ(ta.cost_usd, tb.cost_usd);
  EXPECT_EQ(ta.prompt_tokens, 9);
  EXPECT_EQ(ta.calls, 3u);
}

}  // namespace
}  // namespace rpm
