#pragma once

// Dataset files and per-user chronological train/test splits.
//
// Three input formats are understood:
//   histories  [{"user_id", "interactions": [{"query", "response", "timestamp"}]}]
//   lamp       [{"user_id" | "id", "profile": [{<task fields>, "date"?}]}]
//   goqa       [{"question", "options": [...], "selections": {<group>: [p, ...]}}]
// For goqa every population group becomes one user; groups left with fewer
// than two items after filtering are dropped.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rpm/domain.hpp"

namespace rpm {

enum class DatasetFormat { histories, lamp, goqa };

std::string to_string(DatasetFormat f);
std::optional<DatasetFormat> dataset_format_from_string(const std::string& s);

struct DatasetOptions {
  DatasetFormat format = DatasetFormat::histories;
  double train_fraction = 0.9;
  // 0 keeps every user.
  std::size_t max_users = 0;
  // goqa: keep items whose most selected option exceeds this share, then at
  // most this many items per group.
  double goqa_threshold = 0.8;
  std::size_t goqa_sample = 40;
  std::uint64_t seed = 0;
};

struct UserSplit {
  UserHistory train;
  std::vector<Interaction> test;
};

struct DatasetSplit {
  std::vector<UserSplit> users;
};

// Profile fields holding the query and the response for a LaMP task.
std::pair<std::string, std::string> lamp_fields(const TaskProfile& task);

// Leading-digit run of a date such as "2014-05-01" read as 20140501.
std::optional<std::int64_t> date_key(const std::string& date);

// Record-level problems throw LoadError carrying the record index.
std::vector<UserHistory> parse_histories(const nlohmann::json& doc);
std::vector<UserHistory> parse_lamp(const TaskProfile& task, const nlohmann::json& doc);
std::vector<UserHistory> parse_goqa(const nlohmann::json& doc, const DatasetOptions& opts);

// "question\nOptions:\nA. first\nB. second ..."
std::string goqa_query(const std::string& question, const std::vector<std::string>& options);

// floor(n * fraction), kept within [1, n - 1].
std::size_t train_count(std::size_t n, double fraction);

// Sorts each history by timestamp (stable) and cuts it. Users with fewer
// than two interactions throw DataError.
DatasetSplit chronological_split(std::vector<UserHistory> users, double train_fraction);

DatasetSplit load_dataset(const TaskProfile& task, const std::filesystem::path& path, const DatasetOptions& opts);

}  // namespace rpm
