#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "rpm/domain.hpp"

namespace rpm {

enum class TemplateId {
  feature_extraction,
  factor_propose,
  factor_assign,
  factor_statistics,
  reasoning_construction,
  reasoning_aligned_generation,
  zero_shot_generation,
};

std::string to_string(TemplateId id);
std::optional<TemplateId> template_id_from_string(const std::string& s);

using Bindings = std::map<std::string, std::string>;

// Template text with `{name}` placeholders; `{{` and `}}` render as literal
// braces, and any other brace that does not enclose an identifier is literal.
struct PromptTemplate {
  TemplateId id = TemplateId::feature_extraction;
  std::string body;
  std::vector<std::string> required_keys;

  static PromptTemplate from_body(TemplateId id, std::string body);
  // Throws RenderError naming the first unbound key.
  std::string render(const Bindings& bindings) const;
};

// Placeholder names in order of first appearance.
std::vector<std::string> placeholder_keys(std::string_view body);

// Loads `<root>/<task_id>/<template>.txt`, falling back to
// `<root>/default/<template>.txt`.
class TemplateLibrary {
 public:
  explicit TemplateLibrary(std::filesystem::path root);

  const PromptTemplate& get(TemplateId id, const std::string& task_id) const;

  // Adds the task wording keys (task_name, input_name, output_name,
  // task_description) unless the caller bound them already.
  std::string render(TemplateId id, const TaskProfile& task, Bindings bindings) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<std::string, TemplateId>, std::shared_ptr<const PromptTemplate>> cache_;
};

// Binds query/response under both the task's own keys and the generic
// `query` / `response` names used by the default family.
void bind_io(Bindings& b, const TaskProfile& task, const std::string& query, const std::optional<std::string>& response);

// --- structured output -----------------------------------------------------

// Applies the repair pipeline (fence stripping, first balanced object,
// trailing-comma removal) and parses. Throws ParseError with the raw text.
nlohmann::json parse_json_lenient(std::string_view raw);

enum class SchemaId { features, factor_proposals, assignment, influences, reasoning, generation };

struct ExtractedFeature {
  std::string name;
  std::string context;
  // Factor label(s) cited by the model during factor-aware extraction.
  std::vector<std::string> factor_labels;
  bool operator==(const ExtractedFeature&) const = default;
};

struct FeatureList {
  std::vector<ExtractedFeature> features;
  bool operator==(const FeatureList&) const = default;
};

struct ProposalList {
  std::vector<std::string> labels;
  bool operator==(const ProposalList&) const = default;
};

struct AssignmentChoice {
  std::optional<long long> index;  // nullopt = no matching factor
  bool operator==(const AssignmentChoice&) const = default;
};

struct IndexedJudgment {
  long long feature_index = 0;
  InfluenceJudgment judgment;
  bool operator==(const IndexedJudgment&) const = default;
};

struct InfluenceList {
  std::vector<IndexedJudgment> items;
  bool operator==(const InfluenceList&) const = default;
};

struct ReasoningText {
  std::string reasoning;
  bool operator==(const ReasoningText&) const = default;
};

struct GenerationOutput {
  std::optional<std::string> reasoning;
  std::string answer;
  bool operator==(const GenerationOutput&) const = default;
};

using StructuredValue =
    std::variant<FeatureList, ProposalList, AssignmentChoice, InfluenceList, ReasoningText, GenerationOutput>;

struct SchemaOptions {
  // Answer key for the generation schema.
  std::string answer_field = "answer";
  // Generation must carry a non-empty reasoning string.
  bool require_reasoning = true;
};

// Throws ParseError (unparseable / wrong types / unknown polarity label) or
// ProtocolError (structurally valid JSON missing a required field).
StructuredValue parse_structured(SchemaId schema, std::string_view completion, const SchemaOptions& opts = {});

// Inverse of parse_structured: canonical JSON text of a value.
std::string serialize_structured(const StructuredValue& value, const SchemaOptions& opts = {});

}  // namespace rpm
