#pragma once

// Text renderings of domain values that get bound into prompt placeholders.

#include <string>
#include <vector>

#include "rpm/domain.hpp"

namespace rpm {

inline constexpr const char* kEmptyFeaturesSentinel = "(no features)";

// "name: context"
std::string feature_text(const Feature& f);

// Feature texts joined with "; ", or the sentinel for an empty set. This is
// the text embedded for sample-level retrieval.
std::string concat_feature_text(const FeatureSet& fs);

// "0. name: context" per line; indices match the influence schema.
std::string numbered_feature_list(const FeatureSet& fs);

// "- name: context (factor: Label)" per line; features without a factor
// show "unassigned".
std::string annotated_feature_list(const FeatureSet& fs, const FactorSet& factors);

// One line per factor with its statistics.
std::string factor_summary(const FactorSet& factors);
std::string factor_line(const Factor& f);

// "0. Label" per line.
std::string numbered_labels(const std::vector<std::string>& labels);

std::string format_percent(double fraction);

}  // namespace rpm
