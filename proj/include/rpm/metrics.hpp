#pragma once

#include <string>
#include <vector>

namespace rpm {

// All metrics throw Error on length mismatch and return 0 on empty input.

double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& golds);

// Unweighted mean of per-class F1 over class_space. A class with no gold and
// no predicted items has F1 0. Predictions outside the space only cost recall.
double macro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                const std::vector<std::string>& class_space);

double mae(const std::vector<double>& preds, const std::vector<double>& golds);
double rmse(const std::vector<double>& preds, const std::vector<double>& golds);

// Lowercase, every non-alphanumeric ASCII byte becomes a space, split on
// whitespace.
std::vector<std::string> rouge_tokens(const std::string& text);

// F-measures; 0 when either side has no tokens.
double rouge1(const std::string& pred, const std::string& gold);
double rougeL(const std::string& pred, const std::string& gold);

double mean(const std::vector<double>& xs);

}  // namespace rpm
