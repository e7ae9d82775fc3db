#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rpm/domain.hpp"

namespace rpm {

// Built-in profiles: "lamp2" (movie tagging), "lamp3" (product rating),
// "lamp5" (paper title generation), "goqa" (opinion QA).
std::optional<TaskProfile> builtin_task(const std::string& task_id);
std::vector<std::string> builtin_task_ids();

// Fifteen most frequent movie tags used as the tagging class space.
const std::vector<std::string>& movie_tag_classes();

}  // namespace rpm
