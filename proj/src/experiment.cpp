#include "rpm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <set>
#include <sstream>

#include "rpm/domain_json.hpp"
#include "rpm/error.hpp"
#include "rpm/memory.hpp"
#include "rpm/metrics.hpp"
#include "rpm/parallel.hpp"
#include "rpm/tasks.hpp"
#include "rpm/validate.hpp"

namespace fs = std::filesystem;

namespace rpm {

namespace {

#ifdef RPM_DEFAULT_TEMPLATE_DIR
constexpr const char* kDefaultTemplates = RPM_DEFAULT_TEMPLATE_DIR;
#else
constexpr const char* kDefaultTemplates = "templates";
#endif

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void require_valid(const ValidationReport& report, const std::string& what) {
  if (report.empty()) return;
  std::string msg = "invalid " + what + ":";
  for (const auto& r : report) msg += " " + r + ";";
  throw ConfigError(msg);
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig cfg;
  try {
    const auto& task = j.at("task");
    if (task.is_string()) {
      auto t = builtin_task(task.get<std::string>());
      if (!t) throw ConfigError("unknown task '" + task.get<std::string>() + "'");
      cfg.task = *t;
    } else {
      cfg.task = task.get<TaskProfile>();
    }

    const auto ds = j.value("dataset", nlohmann::json::object());
    if (ds.contains("path")) cfg.dataset_path = resolve(base_dir, ds.at("path").get<std::string>());
    const auto fmt = ds.value("format", std::string("histories"));
    auto parsed = dataset_format_from_string(fmt);
    if (!parsed) throw ConfigError("unknown dataset format '" + fmt + "'");
    cfg.dataset.format = *parsed;
    cfg.dataset.train_fraction = ds.value("train_fraction", cfg.dataset.train_fraction);
    cfg.dataset.max_users = ds.value("max_users", cfg.dataset.max_users);
    cfg.dataset.goqa_threshold = ds.value("goqa_threshold", cfg.dataset.goqa_threshold);
    cfg.dataset.goqa_sample = ds.value("goqa_sample", cfg.dataset.goqa_sample);
    cfg.dataset.seed = ds.value("seed", cfg.dataset.seed);

    cfg.artifacts_dir = resolve(base_dir, j.value("artifacts_dir", std::string("artifacts")));
    cfg.output_dir = resolve(base_dir, j.value("output_dir", std::string("out")));
    cfg.templates_dir =
        j.contains("templates_dir") ? resolve(base_dir, j.at("templates_dir").get<std::string>()) : fs::path(kDefaultTemplates);

    if (j.contains("backend")) cfg.backend = j.at("backend").get<BackendConfig>();
    if (!cfg.backend.replay_dir.empty()) cfg.backend.replay_dir = resolve(base_dir, cfg.backend.replay_dir).string();
    if (j.contains("pas")) cfg.pas = j.at("pas").get<PasConfig>();
    if (j.contains("retrieval")) cfg.retrieval = j.at("retrieval").get<RetrievalConfig>();
    cfg.target_reasoning = j.value("target_reasoning", cfg.target_reasoning);
    cfg.zero_shot_baseline = j.value("zero_shot_baseline", cfg.zero_shot_baseline);
    cfg.user_parallel = j.value("user_parallel", cfg.user_parallel);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  require_valid(validate(cfg.task), "task");
  require_valid(validate(cfg.pas), "pas config");
  require_valid(validate(cfg.retrieval), "retrieval config");
  if (cfg.user_parallel < 1) throw ConfigError("user_parallel must be at least 1");
  if (!(cfg.dataset.train_fraction > 0.0 && cfg.dataset.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return {{"task", cfg.task},
          {"dataset",
           {{"path", cfg.dataset_path.string()},
            {"format", to_string(cfg.dataset.format)},
            {"train_fraction", cfg.dataset.train_fraction},
            {"max_users", cfg.dataset.max_users},
            {"goqa_threshold", cfg.dataset.goqa_threshold},
            {"goqa_sample", cfg.dataset.goqa_sample},
            {"seed", cfg.dataset.seed}}},
          {"artifacts_dir", cfg.artifacts_dir.string()},
          {"templates_dir", cfg.templates_dir.string()},
          {"output_dir", cfg.output_dir.string()},
          {"backend", cfg.backend},
          {"pas", cfg.pas},
          {"retrieval", cfg.retrieval},
          {"target_reasoning", cfg.target_reasoning},
          {"zero_shot_baseline", cfg.zero_shot_baseline},
          {"user_parallel", cfg.user_parallel}};
}

std::shared_ptr<Transport> make_transport(const BackendConfig& backend) {
  if (backend.mode == GatewayMode::replay) return nullptr;
  return std::make_shared<HttpTransport>(backend.base_url, backend.timeout_s);
}

std::string build_timestamp(const BackendConfig& backend) {
  if (backend.mode == GatewayMode::replay) return "1970-01-01T00:00:00Z";
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json totals_json(const LedgerTotals& t) {
  return {{"calls", t.calls},
          {"prompt_tokens", t.prompt_tokens},
          {"completion_tokens", t.completion_tokens},
          {"cost_usd", t.cost_usd}};
}

std::map<std::string, double> compute_metrics(const TaskProfile& task, const std::vector<std::string>& preds,
                                              const std::vector<std::string>& golds) {
  auto numbers = [](const std::vector<std::string>& xs) {
    std::vector<double> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(x, &used));
        if (used != x.size()) throw std::invalid_argument(x);
      } catch (const std::exception&) {
        throw DataError("'" + x + "' is not a number");
      }
    }
    return out;
  };

  std::map<std::string, double> out;
  for (const auto& id : task.metric_ids) {
    if (id == "accuracy") {
      out[id] = accuracy(preds, golds);
    } else if (id == "macro_f1") {
      out[id] = macro_f1(preds, golds, task.class_space.value_or(std::vector<std::string>{}));
    } else if (id == "mae") {
      out[id] = mae(numbers(preds), numbers(golds));
    } else if (id == "rmse") {
      out[id] = rmse(numbers(preds), numbers(golds));
    } else if (id == "rouge1" || id == "rougeL") {
      if (preds.size() != golds.size()) throw Error("metric inputs differ in length");
      std::vector<double> scores;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        scores.push_back(id == "rouge1" ? rouge1(preds[i], golds[i]) : rougeL(preds[i], golds[i]));
      }
      out[id] = mean(scores);
    } else {
      throw ConfigError("unknown metric '" + id + "'");
    }
  }
  return out;
}

std::string majority_label(const TaskProfile& task, const UserHistory& train) {
  if (!task.class_space || task.class_space->empty()) return "";
  const auto& classes = *task.class_space;
  std::vector<int> counts(classes.size(), 0);
  for (const auto& it : train.interactions) {
    auto pos = std::find(classes.begin(), classes.end(), it.response);
    if (pos != classes.end()) ++counts[static_cast<std::size_t>(pos - classes.begin())];
  }
  const auto best = std::max_element(counts.begin(), counts.end());
  return classes[static_cast<std::size_t>(best - counts.begin())];
}

UserBuild build_user(const Services& s, const UserHistory& train, const PasConfig& pas, const ArtifactStore& store,
                     const std::string& built_at) {
  UserBuild out;
  out.factors = build_user_factors(s, train, pas);
  store.save_factors(out.factors);
  auto mem = build_memory(s, train, out.factors, built_at);
  mem.memory.provenance.version = store.save_memory(mem.memory);
  out.memory = std::move(mem.memory);
  out.leaked = std::move(mem.leaked);
  return out;
}

namespace {

struct ItemOutcome {
  std::size_t index = 0;
  std::string gold;
  std::optional<PredictionRecord> record;
  std::string error;
  std::string scored_pred;
  bool imputed = false;
};

struct UserOutcome {
  std::string user_id;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::optional<std::string> setup_error;
  std::vector<std::size_t> leaked;
  // runs[r][i]
  std::vector<std::vector<ItemOutcome>> runs;
  std::vector<ItemOutcome> baseline;
  Ledger preprocessing;
  Ledger inference;
  Ledger baseline_cost;
  double build_ms = 0.0;
  double inference_ms = 0.0;
};

void score_item(const TaskProfile& task, const std::string& majority, ItemOutcome& item) {
  if (!item.record) return;
  // Labelled tasks score an unusable answer as the user's majority training
  // label (flagged through `imputed`); free text is scored as produced.
  if (item.record->answer_error && task.class_space && !majority.empty()) {
    item.scored_pred = majority;
    item.imputed = true;
  } else {
    item.scored_pred = item.record->answer;
  }
}

nlohmann::json item_json(const ItemOutcome& item) {
  nlohmann::json j = {{"index", item.index}, {"gold", item.gold}};
  if (!item.record) {
    j["error"] = item.error;
    return j;
  }
  const auto& r = *item.record;
  j["answer"] = r.answer;
  j["raw_answer"] = r.raw_answer;
  j["scored_as"] = item.scored_pred;
  j["answer_error"] = r.answer_error;
  j["imputed"] = item.imputed;
  j["reasoning"] = r.reasoning;
  j["retrieved"] = r.retrieved;
  j["flags"] = r.flags;
  return j;
}

struct Collected {
  std::vector<std::string> preds;
  std::vector<std::string> golds;
  std::size_t items = 0;
  std::size_t failed = 0;
  std::size_t answer_errors = 0;
  std::size_t imputed = 0;

  void add(const ItemOutcome& item) {
    ++items;
    if (!item.record) {
      ++failed;
      return;
    }
    preds.push_back(item.scored_pred);
    golds.push_back(item.gold);
    if (item.record->answer_error) ++answer_errors;
    if (item.imputed) ++imputed;
  }

  nlohmann::json summary(const TaskProfile& task) const {
    const auto scored = preds.size();
    return {{"items", items},
            {"scored", scored},
            {"failed", failed},
            {"coverage", items == 0 ? 0.0 : static_cast<double>(scored) / static_cast<double>(items)},
            {"answer_errors", answer_errors},
            {"imputed", imputed},
            {"metrics", compute_metrics(task, preds, golds)}};
  }
};

}  // namespace

ExperimentResult run_experiment(const RunConfig& cfg, Gateway& gateway, const TemplateLibrary& templates,
                                const ExperimentOptions& opts) {
  if (opts.runs < 1) throw ConfigError("runs must be at least 1");
  const auto started = std::chrono::steady_clock::now();
  auto split = load_dataset(cfg.task, cfg.dataset_path, cfg.dataset);
  if (!opts.users.empty()) {
    std::vector<UserSplit> kept;
    for (const auto& id : opts.users) {
      auto it = std::find_if(split.users.begin(), split.users.end(),
                             [&](const UserSplit& u) { return u.train.user_id == id; });
      if (it == split.users.end()) throw ConfigError("user '" + id + "' is not in the dataset");
      kept.push_back(*it);
    }
    split.users = std::move(kept);
  }

  const ArtifactStore store(cfg.artifacts_dir);
  const auto built_at = build_timestamp(cfg.backend);
  std::vector<UserOutcome> outcomes(split.users.size());

  auto errors = parallel_for(split.users.size(), cfg.user_parallel, [&](std::size_t u) {
    const auto& us = split.users[u];
    auto& out = outcomes[u];
    out.user_id = us.train.user_id;
    out.train_size = us.train.interactions.size();
    out.test_size = us.test.size();

    auto t0 = std::chrono::steady_clock::now();
    std::optional<UserState> state;
    try {
      Services pre{gateway, templates, cfg.task, &out.preprocessing};
      if (opts.build) {
        auto built = build_user(pre, us.train, cfg.pas, store, built_at);
        out.leaked = built.leaked;
        state.emplace(std::move(built.factors), std::move(built.memory));
      } else {
        state.emplace(store.load_factors(out.user_id), store.load_memory(out.user_id));
      }
      if (state->memory().examples.size() != us.train.interactions.size()) {
        throw DataError("stored memory has " + std::to_string(state->memory().examples.size()) +
                        " examples for " + std::to_string(us.train.interactions.size()) + " training interactions");
      }
    } catch (const Error& e) {
      out.setup_error = e.what();
    }
    out.build_ms = elapsed_ms(t0);

    const auto majority = majority_label(cfg.task, us.train);
    t0 = std::chrono::steady_clock::now();
    Services inf{gateway, templates, cfg.task, &out.inference};
    for (int r = 0; r < opts.runs; ++r) {
      InferenceConfig ic{cfg.retrieval, cfg.target_reasoning};
      ic.retrieval.seed = cfg.retrieval.seed + static_cast<std::uint64_t>(r);
      auto& items = out.runs.emplace_back();
      for (std::size_t i = 0; i < us.test.size(); ++i) {
        ItemOutcome item;
        item.index = i;
        item.gold = us.test[i].response;
        if (out.setup_error) {
          item.error = "setup failed: " + *out.setup_error;
        } else {
          try {
            item.record = personalize(inf, *state, us.test[i].query, ic);
          } catch (const Error& e) {
            item.error = e.what();
          }
        }
        score_item(cfg.task, majority, item);
        items.push_back(std::move(item));
      }
    }
    out.inference_ms = elapsed_ms(t0);

    if (cfg.zero_shot_baseline) {
      Services base{gateway, templates, cfg.task, &out.baseline_cost};
      for (std::size_t i = 0; i < us.test.size(); ++i) {
        ItemOutcome item;
        item.index = i;
        item.gold = us.test[i].response;
        try {
          item.record = zero_shot(base, us.test[i].query);
        } catch (const Error& e) {
          item.error = e.what();
        }
        score_item(cfg.task, majority, item);
        out.baseline.push_back(std::move(item));
      }
    }
  });
  rethrow_first(errors);

  // Sorted by user so the report does not depend on input or finish order.
  std::vector<const UserOutcome*> sorted;
  for (const auto& o : outcomes) sorted.push_back(&o);
  std::sort(sorted.begin(), sorted.end(),
            [](const UserOutcome* a, const UserOutcome* b) { return a->user_id < b->user_id; });

  nlohmann::json report;
  report["task"] = cfg.task.task_id;
  report["retrieval"] = cfg.retrieval;
  report["target_reasoning"] = cfg.target_reasoning;
  report["models"] = {{"chat", cfg.backend.model_id}, {"embed", cfg.backend.embed_model_id}};
  report["users"] = outcomes.size();

  std::vector<Collected> run_totals(static_cast<std::size_t>(opts.runs));
  Collected baseline_total;
  std::vector<CallLedgerEntry> pre_entries, inf_entries, base_entries;
  nlohmann::json per_user = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();
  nlohmann::json timing_users = nlohmann::json::array();
  double pre_latency = 0.0, inf_latency = 0.0;

  for (const auto* up : sorted) {
    const auto& u = *up;
    Collected mine;
    for (int r = 0; r < opts.runs; ++r) {
      for (const auto& item : u.runs[static_cast<std::size_t>(r)]) {
        run_totals[static_cast<std::size_t>(r)].add(item);
        if (r == 0) mine.add(item);
        if (!item.record) {
          failures.push_back({{"user_id", u.user_id}, {"run", r}, {"index", item.index}, {"error", item.error}});
        }
      }
    }
    for (const auto& item : u.baseline) baseline_total.add(item);

    const auto pre = u.preprocessing.totals();
    const auto inf = u.inference.totals();
    for (const auto& e : u.preprocessing.entries()) pre_entries.push_back(e);
    for (const auto& e : u.inference.entries()) inf_entries.push_back(e);
    for (const auto& e : u.baseline_cost.entries()) base_entries.push_back(e);
    pre_latency += pre.latency_ms;
    inf_latency += inf.latency_ms;

    nlohmann::json uj = mine.summary(cfg.task);
    uj["user_id"] = u.user_id;
    uj["train_size"] = u.train_size;
    uj["test_size"] = u.test_size;
    if (u.setup_error) uj["setup_error"] = *u.setup_error;
    uj["reasoning_leaks"] = u.leaked;
    uj["cost"] = {{"preprocessing", totals_json(pre)}, {"inference", totals_json(inf)}};
    nlohmann::json items = nlohmann::json::array();
    for (const auto& item : u.runs.front()) items.push_back(item_json(item));
    uj["predictions"] = std::move(items);
    per_user.push_back(std::move(uj));

    const double per_item =
        u.test_size == 0 ? 0.0 : u.inference_ms / static_cast<double>(u.test_size * static_cast<std::size_t>(opts.runs));
    timing_users.push_back({{"user_id", u.user_id},
                            {"build_wall_ms", u.build_ms},
                            {"inference_wall_ms", u.inference_ms},
                            {"inference_wall_ms_per_item", per_item},
                            {"preprocessing_latency_ms", pre.latency_ms},
                            {"inference_latency_ms", inf.latency_ms}});
  }

  const auto main_summary = run_totals.front().summary(cfg.task);
  for (const auto& [k, v] : main_summary.items()) report[k] = v;
  if (opts.runs > 1) {
    nlohmann::json runs = nlohmann::json::array();
    std::map<std::string, std::vector<double>> series;
    for (int r = 0; r < opts.runs; ++r) {
      auto s = run_totals[static_cast<std::size_t>(r)].summary(cfg.task);
      for (const auto& [k, v] : s["metrics"].items()) series[k].push_back(v.get<double>());
      runs.push_back({{"retrieval_seed", cfg.retrieval.seed + static_cast<std::uint64_t>(r)},
                      {"metrics", s["metrics"]}});
    }
    nlohmann::json spread;
    for (const auto& [k, xs] : series) {
      const double m = mean(xs);
      double var = 0.0;
      for (double x : xs) var += (x - m) * (x - m);
      spread[k] = {{"mean", m}, {"std", std::sqrt(var / static_cast<double>(xs.size() - 1))}};
    }
    report["runs"] = std::move(runs);
    report["run_summary"] = std::move(spread);
  }
  if (cfg.zero_shot_baseline) report["zero_shot"] = baseline_total.summary(cfg.task);

  auto all_entries = pre_entries;
  all_entries.insert(all_entries.end(), inf_entries.begin(), inf_entries.end());
  all_entries.insert(all_entries.end(), base_entries.begin(), base_entries.end());
  const auto pre_total = sum_entries(pre_entries);
  const auto inf_total = sum_entries(inf_entries);
  const auto base_total = sum_entries(base_entries);
  const auto all = sum_entries(all_entries);
  report["cost"] = {{"preprocessing", totals_json(pre_total)},
                    {"inference", totals_json(inf_total)},
                    {"zero_shot", totals_json(base_total)},
                    {"total", totals_json(all)}};
  report["per_user"] = std::move(per_user);
  report["failures"] = std::move(failures);

  nlohmann::json timing = {{"total_wall_ms", elapsed_ms(started)},
                           {"preprocessing_latency_ms", pre_latency},
                           {"inference_latency_ms", inf_latency},
                           {"users", std::move(timing_users)}};
  return {std::move(report), std::move(timing)};
}

std::string render_report(const nlohmann::json& report) {
  std::ostringstream out;
  auto num = [](const nlohmann::json& v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v.get<double>());
    return std::string(buf);
  };
  out << "task " << report.value("task", std::string("?")) << ", " << report.value("users", 0) << " users, "
      << report.value("scored", 0) << "/" << report.value("items", 0) << " items scored";
  if (report.contains("retrieval")) {
    out << ", retriever " << report["retrieval"].value("strategy", std::string("?")) << " k="
        << report["retrieval"].value("k", 0);
  }
  out << "\n";
  if (report.contains("metrics")) {
    for (const auto& [k, v] : report["metrics"].items()) out << "  " << k << " " << num(v) << "\n";
  }
  if (report.contains("run_summary")) {
    for (const auto& [k, v] : report["run_summary"].items()) {
      out << "  " << k << " mean " << num(v["mean"]) << " std " << num(v["std"]) << "\n";
    }
  }
  if (report.contains("zero_shot")) {
    out << "zero-shot baseline\n";
    for (const auto& [k, v] : report["zero_shot"]["metrics"].items()) out << "  " << k << " " << num(v) << "\n";
  }
  if (report.contains("cost")) {
    out << "cost\n";
    for (const auto& part : {"preprocessing", "inference", "zero_shot", "total"}) {
      if (!report["cost"].contains(part)) continue;
      const auto& c = report["cost"][part];
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  %-14s %6lld calls %10lld in %9lld out  $%.4f\n", part,
                    c.value("calls", 0LL), c.value("prompt_tokens", 0LL), c.value("completion_tokens", 0LL),
                    c.value("cost_usd", 0.0));
      out << buf;
    }
  }
  if (report.contains("failures") && !report["failures"].empty()) {
    out << report["failures"].size() << " failed items\n";
  }
  return out.str();
}

}  // namespace rpm
