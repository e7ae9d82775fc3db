#pragma once

// Run configuration and the end-to-end evaluation loop.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rpm/dataset.hpp"
#include "rpm/domain.hpp"
#include "rpm/factors.hpp"
#include "rpm/gateway.hpp"
#include "rpm/inference.hpp"
#include "rpm/prompt.hpp"
#include "rpm/store.hpp"

namespace rpm {

struct RunConfig {
  TaskProfile task;
  std::filesystem::path dataset_path;
  DatasetOptions dataset;
  std::filesystem::path artifacts_dir = "artifacts";
  std::filesystem::path templates_dir;
  std::filesystem::path output_dir = "out";
  BackendConfig backend;
  PasConfig pas;
  RetrievalConfig retrieval;
  bool target_reasoning = true;
  bool zero_shot_baseline = false;
  int user_parallel = 1;
};

// "task" is a builtin id or a full task object. Relative paths resolve
// against base_dir.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Null in replay mode, which never needs the network.
std::shared_ptr<Transport> make_transport(const BackendConfig& backend);

// Build timestamp for memory provenance. Replay runs get a fixed value so
// their artifacts stay byte-identical.
std::string build_timestamp(const BackendConfig& backend);

nlohmann::json totals_json(const LedgerTotals& t);

// Computes the task's metrics. For rating tasks `preds` must already be
// numeric strings.
std::map<std::string, double> compute_metrics(const TaskProfile& task, const std::vector<std::string>& preds,
                                              const std::vector<std::string>& golds);

// Most frequent training response within the class space; ties go to the
// class listed first.
std::string majority_label(const TaskProfile& task, const UserHistory& train);

struct UserBuild {
  FactorSet factors;
  ReasoningMemory memory;
  std::vector<std::size_t> leaked;
};

// Stage 1 and 2 for one user, saved to the store.
UserBuild build_user(const Services& s, const UserHistory& train, const PasConfig& pas, const ArtifactStore& store,
                     const std::string& built_at);

struct ExperimentOptions {
  bool build = false;
  int runs = 1;
  // Restrict to these users when non-empty.
  std::vector<std::string> users;
};

struct ExperimentResult {
  // Depends only on inputs and recorded responses.
  nlohmann::json report;
  // Wall-clock and latency figures, kept apart from the report.
  nlohmann::json timing;
};

ExperimentResult run_experiment(const RunConfig& cfg, Gateway& gateway, const TemplateLibrary& templates,
                                const ExperimentOptions& opts);

// Plain-text summary of a report.
std::string render_report(const nlohmann::json& report);

}  // namespace rpm
