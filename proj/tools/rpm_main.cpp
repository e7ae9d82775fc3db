// rpm: build per-user factors and reasoning memories, run personalized
// inference, and evaluate.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rpm/domain_json.hpp"
#include "rpm/error.hpp"
#include "rpm/experiment.hpp"
#include "rpm/memory.hpp"
#include "rpm/store.hpp"

namespace {

using namespace rpm;

struct Common {
  std::string config;
  std::string mode;
  std::string replay_dir;
  std::vector<std::string> users;
};

RunConfig load(const Common& c) {
  auto cfg = load_run_config(c.config);
  if (!c.mode.empty()) {
    auto m = gateway_mode_from_string(c.mode);
    if (!m) throw ConfigError("unknown mode '" + c.mode + "'");
    cfg.backend.mode = *m;
  }
  if (!c.replay_dir.empty()) cfg.backend.replay_dir = c.replay_dir;
  if (cfg.backend.mode != GatewayMode::replay && !cfg.backend.api_key_env.empty() &&
      std::getenv(cfg.backend.api_key_env.c_str()) == nullptr) {
    throw ConfigError("environment variable " + cfg.backend.api_key_env + " is not set (needed in " +
                      to_string(cfg.backend.mode) + " mode; leave api_key_env empty for keyless backends)");
  }
  return cfg;
}

std::vector<UserSplit> selected_users(const RunConfig& cfg, const std::vector<std::string>& ids) {
  auto split = load_dataset(cfg.task, cfg.dataset_path, cfg.dataset);
  if (ids.empty()) return split.users;
  std::vector<UserSplit> out;
  for (const auto& id : ids) {
    bool found = false;
    for (const auto& u : split.users) {
      if (u.train.user_id == id) {
        out.push_back(u);
        found = true;
      }
    }
    if (!found) throw ConfigError("user '" + id + "' is not in the dataset");
  }
  return out;
}

void print_cost(Gateway& gw) {
  const auto t = gw.ledger().totals();
  std::fprintf(stderr, "%zu calls, %lld prompt + %lld completion tokens, $%.4f\n", t.calls,
               static_cast<long long>(t.prompt_tokens), static_cast<long long>(t.completion_tokens), t.cost_usd);
}

int cmd_build_factors(const Common& c) {
  const auto cfg = load(c);
  Gateway gw(cfg.backend, make_transport(cfg.backend));
  const TemplateLibrary templates(cfg.templates_dir);
  const ArtifactStore store(cfg.artifacts_dir);
  const Services s{gw, templates, cfg.task};
  for (const auto& u : selected_users(cfg, c.users)) {
    const auto factors = build_user_factors(s, u.train, cfg.pas);
    store.save_factors(factors);
    std::printf("%s: %zu factors, coverage %.3f after %d rounds -> %s\n", factors.user_id.c_str(),
                factors.factors.size(), factors.coverage_fraction, factors.rounds,
                store.factors_path(factors.user_id).string().c_str());
  }
  print_cost(gw);
  return 0;
}

int cmd_build_memory(const Common& c) {
  const auto cfg = load(c);
  Gateway gw(cfg.backend, make_transport(cfg.backend));
  const TemplateLibrary templates(cfg.templates_dir);
  const ArtifactStore store(cfg.artifacts_dir);
  const Services s{gw, templates, cfg.task};
  const auto built_at = build_timestamp(cfg.backend);
  for (const auto& u : selected_users(cfg, c.users)) {
    const auto factors = store.load_factors(u.train.user_id);
    auto built = build_memory(s, u.train, factors, built_at);
    const int version = store.save_memory(built.memory);
    std::printf("%s: %zu examples, version %d -> %s\n", u.train.user_id.c_str(), built.memory.examples.size(),
                version, store.memory_path(u.train.user_id).string().c_str());
    for (const auto i : built.leaked) {
      std::printf("  warning: reasoning for interaction %zu repeats the gold response\n", i);
    }
  }
  print_cost(gw);
  return 0;
}

struct InferArgs {
  std::string user;
  std::string query_file;
  std::string retriever;
  int k = -1;
  bool no_target_reasoning = false;
  std::string out;
};

int cmd_infer(const Common& c, const InferArgs& a) {
  const auto cfg = load(c);
  Gateway gw(cfg.backend, make_transport(cfg.backend));
  const TemplateLibrary templates(cfg.templates_dir);
  const ArtifactStore store(cfg.artifacts_dir);
  const Services s{gw, templates, cfg.task};

  InferenceConfig ic{cfg.retrieval, cfg.target_reasoning && !a.no_target_reasoning};
  if (!a.retriever.empty()) {
    auto r = retrieval_strategy_from_string(a.retriever);
    if (!r) throw ConfigError("unknown retriever '" + a.retriever + "'");
    ic.retrieval.strategy = *r;
  }
  if (a.k >= 0) ic.retrieval.k = a.k;

  const UserState state(store.load_factors(a.user), store.load_memory(a.user));
  std::string query = read_file(a.query_file);
  while (!query.empty() && (query.back() == '\n' || query.back() == '\r')) query.pop_back();
  const auto rec = personalize(s, state, query, ic);
  const auto text = json(rec).dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(a.out, text);
  }
  print_cost(gw);
  return 0;
}

int cmd_eval(const Common& c, bool build, int runs, const std::string& out_dir) {
  const auto cfg = load(c);
  Gateway gw(cfg.backend, make_transport(cfg.backend));
  const TemplateLibrary templates(cfg.templates_dir);
  ExperimentOptions opts;
  opts.build = build;
  opts.runs = runs;
  opts.users = c.users;
  const auto result = run_experiment(cfg, gw, templates, opts);
  const std::filesystem::path dir = out_dir.empty() ? cfg.output_dir : std::filesystem::path(out_dir);
  write_file_atomic(dir / "report.json", result.report.dump(2) + "\n");
  write_file_atomic(dir / "timing.json", result.timing.dump(2) + "\n");
  std::cout << render_report(result.report);
  std::cout << "wrote " << (dir / "report.json").string() << "\n";
  return 0;
}

int cmd_report(const std::string& path) {
  std::cout << render_report(nlohmann::json::parse(read_file(path)));
  return 0;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  sub->add_option("--mode", c.mode, "Override backend mode: live, record or replay");
  sub->add_option("--replay-dir", c.replay_dir, "Override the record/replay directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reasoning-level personalization for black-box chat models"};
  app.require_subcommand(1);

  Common bf, bm, inf, ev;
  auto* build_factors = app.add_subcommand("build-factors", "Extract features and cluster them into factors");
  add_common(build_factors, bf);
  build_factors->add_option("--user", bf.users, "Only these users");

  auto* build_mem = app.add_subcommand("build-memory", "Construct reasoning paths and the retrieval memory");
  add_common(build_mem, bm);
  build_mem->add_option("--user", bm.users, "Only these users");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Personalized prediction for one query");
  add_common(infer, inf);
  infer->add_option("--user", ia.user, "User id")->required();
  infer->add_option("--query-file", ia.query_file, "File holding the target query")->required()->check(CLI::ExistingFile);
  infer->add_option("--retriever", ia.retriever,
                    "random, bm25, query_cosine, feature_cosine, feature_level or two_stage");
  infer->add_option("--k", ia.k, "Number of retrieved examples");
  infer->add_flag("--no-target-reasoning", ia.no_target_reasoning, "Ask for the answer only");
  infer->add_option("-o,--out", ia.out, "Write the record here instead of stdout");

  bool build = false;
  int runs = 1;
  std::string out_dir;
  auto* eval = app.add_subcommand("eval", "Evaluate on the held-out split");
  add_common(eval, ev);
  eval->add_flag("--build", build, "Build factors and memories first");
  eval->add_option("--runs", runs, "Repeat inference with consecutive retrieval seeds")->check(CLI::PositiveNumber);
  eval->add_option("--user", ev.users, "Only these users");
  eval->add_option("-o,--out", out_dir, "Output directory (default: output_dir from the config)");

  std::string report_path;
  auto* report = app.add_subcommand("report", "Summarize a report.json");
  report->add_option("path", report_path, "report.json")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build_factors) return cmd_build_factors(bf);
    if (*build_mem) return cmd_build_memory(bm);
    if (*infer) return cmd_infer(inf, ia);
    if (*eval) return cmd_eval(ev, build, runs, out_dir);
    if (*report) return cmd_report(report_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
