#include "rpm/prompt_text.hpp"

#include <cstdio>
#include <sstream>

namespace rpm {

std::string feature_text(const Feature& f) { return f.name + ": " + f.context; }

std::string concat_feature_text(const FeatureSet& fs) {
  if (fs.features.empty()) return kEmptyFeaturesSentinel;
  std::string out;
  for (std::size_t j = 0; j < fs.features.size(); ++j) {
    if (j > 0) out += "; ";
    out += feature_text(fs.features[j]);
  }
  return out;
}

std::string numbered_feature_list(const FeatureSet& fs) {
  std::ostringstream out;
  for (std::size_t j = 0; j < fs.features.size(); ++j) {
    out << '\n' << j << ". " << feature_text(fs.features[j]);
  }
  return out.str();
}

std::string annotated_feature_list(const FeatureSet& fs, const FactorSet& factors) {
  if (fs.features.empty()) return kEmptyFeaturesSentinel;
  std::ostringstream out;
  for (const auto& f : fs.features) {
    std::string label = "unassigned";
    if (f.factor_id) {
      if (const auto* factor = factors.find(*f.factor_id)) label = factor->label;
    }
    out << "\n- " << feature_text(f) << " (factor: " << label << ")";
  }
  return out.str();
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", fraction * 100.0);
  return buf;
}

std::string factor_line(const Factor& f) {
  const auto& s = f.stats;
  std::ostringstream out;
  out << "- " << f.label << ": appears in " << s.coverage << " interactions";
  if (s.kind == StatsKind::discrete) {
    out << "; response propensity ";
    if (!s.propensity) {
      out << "n/a";
    } else {
      bool first = true;
      for (const auto& [label, p] : *s.propensity) {
        if (!first) out << ", ";
        out << label << ": " << format_percent(p);
        first = false;
      }
    }
    return out.str();
  }
  out << "; directly influenced " << s.influence << "/" << s.coverage << " ("
      << format_percent(s.coverage > 0 ? static_cast<double>(s.influence) / s.coverage : 0.0) << ")";
  const int total = s.polarity_counts.total();
  if (!s.polarity || total == 0) {
    out << "; polarity n/a";
  } else {
    out << "; positive " << s.polarity_counts.pos << "/" << total << " (" << format_percent(s.polarity->pos) << ")"
        << ", neutral " << s.polarity_counts.neu << "/" << total << " (" << format_percent(s.polarity->neu) << ")"
        << ", negative " << s.polarity_counts.neg << "/" << total << " (" << format_percent(s.polarity->neg)
        << ")";
  }
  return out.str();
}

std::string factor_summary(const FactorSet& factors) {
  if (factors.factors.empty()) return "(no factors)";
  std::string out;
  for (const auto& f : factors.factors) out += "\n" + factor_line(f);
  return out;
}

std::string numbered_labels(const std::vector<std::string>& labels) {
  std::ostringstream out;
  for (std::size_t i = 0; i < labels.size(); ++i) out << '\n' << i << ". " << labels[i];
  return out.str();
}

}  // namespace rpm
