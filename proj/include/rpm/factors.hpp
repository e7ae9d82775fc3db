#pragma once

// Stage 1: per-interaction feature extraction, Propose-Assign-Select
// clustering of the feature pool into factors, and the factor statistics.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rpm/domain.hpp"
#include "rpm/gateway.hpp"
#include "rpm/prompt.hpp"

namespace rpm {

// What every LLM-backed operation needs. Calls made through chat()/embed()
// are also copied into `sink` when one is set, which lets a caller attribute
// cost to one user or one prediction while the gateway ledger keeps the run
// total.
struct Services {
  Gateway& gateway;
  const TemplateLibrary& templates;
  const TaskProfile& task;
  Ledger* sink = nullptr;

  int workers() const { return gateway.config().max_parallel; }
  ChatResult chat(const std::string& prompt, const std::string& purpose) const;
  EmbedResult embed(const std::vector<std::string>& texts, const std::string& purpose) const;
};

// Rows are features, columns candidate factors. PAS only ever produces at
// most one true entry per row; select_factors does not rely on that.
class AssignmentMatrix {
 public:
  AssignmentMatrix(std::vector<FeatureRef> rows, std::vector<std::string> cols);

  void set(std::size_t row, std::size_t col, bool value = true);
  bool at(std::size_t row, std::size_t col) const { return cells_[row * cols_.size() + col] != 0; }
  std::size_t row_count() const { return rows_.size(); }
  std::size_t col_count() const { return cols_.size(); }
  const std::vector<FeatureRef>& rows() const { return rows_; }
  const std::vector<std::string>& cols() const { return cols_; }
  bool at_most_one_per_row() const;

 private:
  std::vector<FeatureRef> rows_;
  std::vector<std::string> cols_;
  std::vector<char> cells_;
};

FeatureSet extract_features(const Services& s, const Interaction& interaction, std::size_t ordinal);

// Asks for exactly L candidate labels; a wrong count is retried once, then
// raised as ProtocolError.
std::vector<std::string> propose_factors(const Services& s, const std::vector<Feature>& sampled,
                                         const std::vector<std::string>& prev_factors, int num_candidates);

// Index into candidates, or nullopt when the model declines. `residual`
// adds the instruction to force a best-fit existing factor.
std::optional<std::size_t> assign_feature(const Services& s, const Feature& feature,
                                          const std::vector<std::string>& candidates, bool residual = false);

// Greedy max coverage: repeatedly take the column covering the most rows not
// yet covered (lowest column index on ties), up to max_selected columns or
// until no column adds coverage. Returns column indices in pick order.
std::vector<std::size_t> select_factors(const AssignmentMatrix& matrix, int max_selected);

// Number of features handed to Propose: ceil(fraction * uncovered), at least
// 1 and at most `uncovered`.
std::size_t propose_sample_size(std::size_t uncovered, double fraction);

// Clusters the pooled features. The returned FactorSet has membership,
// residuals, coverage and annotated feature_sets, but empty statistics.
FactorSet run_pas(const Services& s, const std::string& user_id, std::vector<FeatureSet> feature_sets,
                  const PasConfig& cfg);

std::vector<InfluenceJudgment> judge_influence(const Services& s, const Interaction& interaction,
                                               const FeatureSet& features);

// Class label -> fraction of covered interactions with that response;
// nullopt when the factor covers no interaction. Throws DataError when a
// covered response lies outside the class space.
std::optional<std::map<std::string, double>> compute_propensity(const UserHistory& history,
                                                                const std::vector<FeatureSet>& feature_sets,
                                                                const Factor& factor,
                                                                const std::vector<std::string>& class_space);

// judgments[i][j] judges feature j of interaction i.
FactorStats compute_open_stats(const UserHistory& history, const std::vector<FeatureSet>& feature_sets,
                               const std::vector<std::vector<InfluenceJudgment>>& judgments, const Factor& factor);

FactorStats compute_discrete_stats(const UserHistory& history, const std::vector<FeatureSet>& feature_sets,
                                   const Factor& factor, const std::vector<std::string>& class_space);

// Full Stage 1. Errors are rethrown as StageError naming the stage.
FactorSet build_user_factors(const Services& s, const UserHistory& history, const PasConfig& cfg);

}  // namespace rpm
