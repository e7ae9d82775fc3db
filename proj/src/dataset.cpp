#include "rpm/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "rpm/domain_json.hpp"
#include "rpm/error.hpp"
#include "rpm/store.hpp"

namespace rpm {

std::string to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::histories: return "histories";
    case DatasetFormat::lamp: return "lamp";
    case DatasetFormat::goqa: return "goqa";
  }
  return "histories";
}

std::optional<DatasetFormat> dataset_format_from_string(const std::string& s) {
  if (s == "histories") return DatasetFormat::histories;
  if (s == "lamp") return DatasetFormat::lamp;
  if (s == "goqa") return DatasetFormat::goqa;
  return std::nullopt;
}

std::pair<std::string, std::string> lamp_fields(const TaskProfile& task) {
  if (task.task_id == "lamp2") return {"description", "tag"};
  if (task.task_id == "lamp3") return {"text", "score"};
  if (task.task_id == "lamp5") return {"abstract", "title"};
  return {task.query_key(), task.response_key()};
}

std::optional<std::int64_t> date_key(const std::string& date) {
  std::int64_t key = 0;
  int digits = 0;
  for (char c : date) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      if (digits >= 18) break;
      key = key * 10 + (c - '0');
      ++digits;
    } else if (digits > 0 && c != '-' && c != '/' && c != '.' && c != ' ' && c != ':' && c != 'T') {
      break;
    }
  }
  if (digits == 0) return std::nullopt;
  return key;
}

namespace {

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    const double d = v.get<double>();
    if (d == std::floor(d) && std::abs(d) < 1e15) return std::to_string(static_cast<long long>(d));
    return v.dump();
  }
  throw std::runtime_error("expected a string or number, got " + std::string(v.type_name()));
}

nlohmann::json parse_array(const nlohmann::json& doc) {
  if (!doc.is_array()) throw LoadError("dataset must be a JSON array", 0);
  return doc;
}

}  // namespace

std::vector<UserHistory> parse_histories(const nlohmann::json& doc) {
  std::vector<UserHistory> out;
  const auto arr = parse_array(doc);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    try {
      out.push_back(arr[i].get<UserHistory>());
    } catch (const std::exception& e) {
      throw LoadError("record " + std::to_string(i) + ": " + e.what(), i);
    }
  }
  return out;
}

std::vector<UserHistory> parse_lamp(const TaskProfile& task, const nlohmann::json& doc) {
  const auto [qf, rf] = lamp_fields(task);
  std::vector<UserHistory> out;
  const auto arr = parse_array(doc);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    try {
      const auto& rec = arr[i];
      UserHistory h;
      if (rec.contains("user_id")) {
        h.user_id = scalar_text(rec.at("user_id"));
      } else {
        h.user_id = scalar_text(rec.at("id"));
      }
      const auto& profile = rec.at("profile");
      if (!profile.is_array()) throw std::runtime_error("'profile' must be an array");
      for (std::size_t j = 0; j < profile.size(); ++j) {
        const auto& p = profile[j];
        Interaction it;
        it.query = scalar_text(p.at(qf));
        it.response = scalar_text(p.at(rf));
        it.timestamp = static_cast<std::int64_t>(j);
        if (p.contains("timestamp") && p.at("timestamp").is_number()) {
          it.timestamp = p.at("timestamp").get<std::int64_t>();
        } else if (p.contains("date") && p.at("date").is_string()) {
          if (auto k = date_key(p.at("date").get<std::string>())) it.timestamp = *k;
        }
        h.interactions.push_back(std::move(it));
      }
      out.push_back(std::move(h));
    } catch (const LoadError&) {
      throw;
    } catch (const std::exception& e) {
      throw LoadError("record " + std::to_string(i) + ": " + e.what(), i);
    }
  }
  return out;
}

std::string goqa_query(const std::string& question, const std::vector<std::string>& options) {
  std::string out = question + "\nOptions:";
  for (std::size_t i = 0; i < options.size(); ++i) {
    out += "\n";
    out += static_cast<char>('A' + i);
    out += ". " + options[i];
  }
  return out;
}

std::vector<UserHistory> parse_goqa(const nlohmann::json& doc, const DatasetOptions& opts) {
  const auto arr = parse_array(doc);
  // Groups in order of first appearance.
  std::vector<UserHistory> groups;
  auto group_for = [&](const std::string& name) -> UserHistory& {
    for (auto& g : groups) {
      if (g.user_id == name) return g;
    }
    groups.push_back(UserHistory{name, {}});
    return groups.back();
  };

  for (std::size_t i = 0; i < arr.size(); ++i) {
    try {
      const auto& rec = arr[i];
      const auto question = rec.at("question").get<std::string>();
      const auto options = rec.at("options").get<std::vector<std::string>>();
      if (options.empty() || options.size() > 10) {
        throw std::runtime_error("expected 1 to 10 options, got " + std::to_string(options.size()));
      }
      for (const auto& [group, dist] : rec.at("selections").items()) {
        const auto probs = dist.get<std::vector<double>>();
        if (probs.size() != options.size()) {
          throw std::runtime_error("group '" + group + "' has " + std::to_string(probs.size()) +
                                   " selection shares for " + std::to_string(options.size()) + " options");
        }
        const auto top = std::max_element(probs.begin(), probs.end());
        if (!(*top > opts.goqa_threshold)) continue;
        const auto letter = static_cast<char>('A' + (top - probs.begin()));
        group_for(group).interactions.push_back(
            Interaction{goqa_query(question, options), std::string(1, letter), static_cast<std::int64_t>(i)});
      }
    } catch (const std::exception& e) {
      throw LoadError("record " + std::to_string(i) + ": " + e.what(), i);
    }
  }

  if (opts.goqa_sample > 0) {
    std::mt19937_64 rng(opts.seed);
    for (auto& g : groups) {
      auto& items = g.interactions;
      if (items.size() <= opts.goqa_sample) continue;
      for (std::size_t i = 0; i < opts.goqa_sample; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (items.size() - i));
        std::swap(items[i], items[j]);
      }
      items.resize(opts.goqa_sample);
      std::sort(items.begin(), items.end(),
                [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    }
  }
  // A group needs one train and one test item.
  std::erase_if(groups, [](const UserHistory& g) { return g.interactions.size() < 2; });
  return groups;
}

std::size_t train_count(std::size_t n, double fraction) {
  if (n < 2) return n;
  auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

DatasetSplit chronological_split(std::vector<UserHistory> users, double train_fraction) {
  DatasetSplit out;
  for (auto& u : users) {
    if (u.interactions.size() < 2) {
      throw DataError("user " + u.user_id + " has " + std::to_string(u.interactions.size()) +
                      " interactions; a split needs at least 2");
    }
    std::stable_sort(u.interactions.begin(), u.interactions.end(),
                     [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    const auto k = train_count(u.interactions.size(), train_fraction);
    UserSplit s;
    s.train.user_id = u.user_id;
    s.train.interactions.assign(u.interactions.begin(), u.interactions.begin() + static_cast<std::ptrdiff_t>(k));
    s.test.assign(u.interactions.begin() + static_cast<std::ptrdiff_t>(k), u.interactions.end());
    out.users.push_back(std::move(s));
  }
  return out;
}

DatasetSplit load_dataset(const TaskProfile& task, const std::filesystem::path& path, const DatasetOptions& opts) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what(), 0);
  }
  std::vector<UserHistory> users;
  switch (opts.format) {
    case DatasetFormat::histories: users = parse_histories(doc); break;
    case DatasetFormat::lamp: users = parse_lamp(task, doc); break;
    case DatasetFormat::goqa: users = parse_goqa(doc, opts); break;
  }
  if (opts.max_users > 0 && users.size() > opts.max_users) users.resize(opts.max_users);
  return chronological_split(std::move(users), opts.train_fraction);
}

}  // namespace rpm
