#include "rpm/metrics.hpp"

#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "rpm/error.hpp"

namespace rpm {

namespace {

template <typename A, typename B>
void check_lengths(const A& a, const B& b) {
  if (a.size() != b.size()) {
    throw Error("metric inputs differ in length: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}

double f_measure(double overlap, std::size_t pred_len, std::size_t gold_len) {
  if (pred_len == 0 || gold_len == 0 || overlap == 0.0) return 0.0;
  const double p = overlap / static_cast<double>(pred_len);
  const double r = overlap / static_cast<double>(gold_len);
  return 2.0 * p * r / (p + r);
}

}  // namespace

double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
  check_lengths(preds, golds);
  if (preds.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double macro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                const std::vector<std::string>& class_space) {
  check_lengths(preds, golds);
  if (class_space.empty() || preds.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : class_space) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == c;
      const bool g = golds[i] == c;
      if (p && g) ++tp;
      if (p && !g) ++fp;
      if (!p && g) ++fn;
    }
    const auto denom = 2 * tp + fp + fn;
    sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(class_space.size());
}

double mae(const std::vector<double>& preds, const std::vector<double>& golds) {
  check_lengths(preds, golds);
  if (preds.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += std::abs(preds[i] - golds[i]);
  return sum / static_cast<double>(preds.size());
}

double rmse(const std::vector<double>& preds, const std::vector<double>& golds) {
  check_lengths(preds, golds);
  if (preds.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += (preds[i] - golds[i]) * (preds[i] - golds[i]);
  return std::sqrt(sum / static_cast<double>(preds.size()));
}

std::vector<std::string> rouge_tokens(const std::string& text) {
  std::string cleaned = text;
  for (auto& ch : cleaned) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && !std::isalnum(c)) {
      ch = ' ';
    } else if (c < 0x80) {
      ch = static_cast<char>(std::tolower(c));
    }
  }
  std::istringstream in(cleaned);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

double rouge1(const std::string& pred, const std::string& gold) {
  const auto p = rouge_tokens(pred);
  const auto g = rouge_tokens(gold);
  std::map<std::string, int> gold_counts;
  for (const auto& t : g) ++gold_counts[t];
  double overlap = 0.0;
  for (const auto& t : p) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      overlap += 1.0;
    }
  }
  return f_measure(overlap, p.size(), g.size());
}

double rougeL(const std::string& pred, const std::string& gold) {
  const auto p = rouge_tokens(pred);
  const auto g = rouge_tokens(gold);
  std::vector<std::size_t> prev(g.size() + 1, 0), cur(g.size() + 1, 0);
  for (std::size_t i = 1; i <= p.size(); ++i) {
    for (std::size_t j = 1; j <= g.size(); ++j) {
      cur[j] = p[i - 1] == g[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return f_measure(static_cast<double>(prev[g.size()]), p.size(), g.size());
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

}  // namespace rpm
