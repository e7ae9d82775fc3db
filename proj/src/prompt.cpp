#include "rpm/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "rpm/error.hpp"

namespace rpm {

using nlohmann::json;

namespace {

constexpr std::pair<TemplateId, const char*> kTemplateNames[] = {
    {TemplateId::feature_extraction, "feature_extraction"},
    {TemplateId::factor_propose, "factor_propose"},
    {TemplateId::factor_assign, "factor_assign"},
    {TemplateId::factor_statistics, "factor_statistics"},
    {TemplateId::reasoning_construction, "reasoning_construction"},
    {TemplateId::reasoning_aligned_generation, "reasoning_aligned_generation"},
    {TemplateId::zero_shot_generation, "zero_shot_generation"},
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Length of the placeholder starting at body[i] == '{' ("{name}"), or 0.
std::size_t placeholder_len(std::string_view body, std::size_t i) {
  std::size_t j = i + 1;
  if (j >= body.size() || !ident_start(body[j])) return 0;
  while (j < body.size() && ident_char(body[j])) ++j;
  if (j >= body.size() || body[j] != '}') return 0;
  return j - i + 1;
}

template <typename OnLiteral, typename OnKey>
void scan_template(std::string_view body, OnLiteral&& literal, OnKey&& key) {
  std::size_t i = 0;
  while (i < body.size()) {
    const char c = body[i];
    if (c == '{' && i + 1 < body.size() && body[i + 1] == '{') {
      literal('{');
      i += 2;
    } else if (c == '}' && i + 1 < body.size() && body[i + 1] == '}') {
      literal('}');
      i += 2;
    } else if (c == '{') {
      if (const auto len = placeholder_len(body, i); len > 0) {
        key(body.substr(i + 1, len - 2));
        i += len;
      } else {
        literal(c);
        ++i;
      }
    } else {
      literal(c);
      ++i;
    }
  }
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string to_string(TemplateId id) {
  for (const auto& [tid, name] : kTemplateNames) {
    if (tid == id) return name;
  }
  return "unknown";
}

std::optional<TemplateId> template_id_from_string(const std::string& s) {
  for (const auto& [tid, name] : kTemplateNames) {
    if (s == name) return tid;
  }
  return std::nullopt;
}

std::vector<std::string> placeholder_keys(std::string_view body) {
  std::vector<std::string> keys;
  scan_template(
      body, [](char) {},
      [&](std::string_view k) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.emplace_back(k);
      });
  return keys;
}

PromptTemplate PromptTemplate::from_body(TemplateId id, std::string body) {
  PromptTemplate t;
  t.id = id;
  t.required_keys = placeholder_keys(body);
  t.body = std::move(body);
  return t;
}

std::string PromptTemplate::render(const Bindings& bindings) const {
  for (const auto& k : required_keys) {
    if (bindings.find(k) == bindings.end()) {
      throw RenderError("template " + to_string(id) + ": missing binding '" + k + "'", k);
    }
  }
  std::string out;
  out.reserve(body.size() * 2);
  scan_template(
      body, [&](char c) { out.push_back(c); }, [&](std::string_view k) { out += bindings.at(std::string(k)); });
  return out;
}

TemplateLibrary::TemplateLibrary(std::filesystem::path root) : root_(std::move(root)) {
  if (!std::filesystem::is_directory(root_ / "default")) {
    throw ConfigError("template root " + root_.string() + " has no default/ directory");
  }
}

const PromptTemplate& TemplateLibrary::get(TemplateId id, const std::string& task_id) const {
  std::lock_guard lock(mu_);
  const auto cache_key = std::make_pair(task_id, id);
  if (auto it = cache_.find(cache_key); it != cache_.end()) return *it->second;

  const std::string file = to_string(id) + ".txt";
  auto path = root_ / task_id / file;
  if (task_id.empty() || !std::filesystem::exists(path)) path = root_ / "default" / file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("missing template file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();

  auto tmpl = std::make_shared<const PromptTemplate>(PromptTemplate::from_body(id, buf.str()));
  cache_.emplace(cache_key, tmpl);
  return *tmpl;
}

std::string TemplateLibrary::render(TemplateId id, const TaskProfile& task, Bindings bindings) const {
  bindings.try_emplace("task_name", task.task_name);
  bindings.try_emplace("input_name", task.input_name);
  bindings.try_emplace("output_name", task.output_name);
  bindings.try_emplace("task_description", task.description);
  return get(id, task.task_id).render(bindings);
}

void bind_io(Bindings& b, const TaskProfile& task, const std::string& query,
             const std::optional<std::string>& response) {
  b["query"] = query;
  if (!task.prompt_binding_keys.empty()) b[task.query_key()] = query;
  if (response) {
    b["response"] = *response;
    if (task.prompt_binding_keys.size() > 1) b[task.response_key()] = *response;
  }
}

// --- repair pipeline ---------------------------------------------------------

namespace {

std::string strip_fences(const std::string& text) {
  const auto open = text.find("```");
  if (open == std::string::npos) return text;
  auto start = text.find('\n', open);
  if (start == std::string::npos) return text;
  ++start;
  const auto close = text.find("```", start);
  return text.substr(start, close == std::string::npos ? std::string::npos : close - start);
}

std::optional<std::string> first_balanced_object(const std::string& text) {
  const auto open = text.find('{');
  if (open == std::string::npos) return std::nullopt;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return text.substr(open, i - open + 1);
    }
  }
  return std::nullopt;
}

std::string drop_trailing_commas(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      out.push_back(c);
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == ',') {
      std::size_t j = i + 1;
      while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j < text.size() && (text[j] == '}' || text[j] == ']')) continue;
    }
    out.push_back(c);
  }
  return out;
}

std::optional<json> try_object(const std::string& text) {
  auto parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) return std::nullopt;
  return parsed;
}

}  // namespace

json parse_json_lenient(std::string_view raw) {
  std::string text = trim(raw);
  if (auto v = try_object(text)) return *v;

  text = trim(strip_fences(text));
  if (auto v = try_object(text)) return *v;

  if (auto obj = first_balanced_object(text)) {
    text = *obj;
    if (auto v = try_object(text)) return *v;
  }

  text = drop_trailing_commas(text);
  if (auto v = try_object(text)) return *v;

  throw ParseError("completion is not a JSON object after repair", std::string(raw));
}

// --- schema decoders ---------------------------------------------------------

namespace {

const json& require_field(const json& obj, const char* key, std::string_view raw) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ProtocolError(std::string("model output lacks required field '") + key + "'");
  (void)raw;
  return *it;
}

std::string require_string(const json& v, const char* what, std::string_view raw) {
  if (!v.is_string()) throw ParseError(std::string(what) + " must be a string", std::string(raw));
  return v.get<std::string>();
}

FeatureList decode_features(const json& obj, std::string_view raw) {
  const auto& arr = require_field(obj, "features", raw);
  if (!arr.is_array()) throw ParseError("'features' must be an array", std::string(raw));
  FeatureList out;
  for (const auto& item : arr) {
    if (!item.is_object()) throw ParseError("feature entries must be objects", std::string(raw));
    ExtractedFeature f;
    if (auto it = item.find("feature_name"); it != item.end()) {
      f.name = trim(require_string(*it, "feature_name", raw));
    }
    if (auto it = item.find("context"); it != item.end()) f.context = trim(require_string(*it, "context", raw));
    if (auto it = item.find("factor"); it != item.end() && !it->is_null()) {
      if (it->is_string()) {
        if (auto s = trim(it->get<std::string>()); !s.empty()) f.factor_labels.push_back(s);
      } else if (it->is_array()) {
        for (const auto& l : *it) {
          if (auto s = trim(require_string(l, "factor", raw)); !s.empty()) f.factor_labels.push_back(s);
        }
      } else {
        throw ParseError("'factor' must be a string or array of strings", std::string(raw));
      }
    }
    // Entries the model left blank carry no usable signal.
    if (f.name.empty() || f.context.empty()) continue;
    out.features.push_back(std::move(f));
  }
  return out;
}

ProposalList decode_proposals(const json& obj, std::string_view raw) {
  const auto& arr = require_field(obj, "factors", raw);
  if (!arr.is_array()) throw ParseError("'factors' must be an array", std::string(raw));
  ProposalList out;
  for (const auto& item : arr) {
    auto label = trim(require_string(item, "factor label", raw));
    if (label.empty()) throw ParseError("empty factor label", std::string(raw));
    out.labels.push_back(std::move(label));
  }
  return out;
}

std::optional<long long> decode_index_token(const json& v, std::string_view raw) {
  if (v.is_null()) return std::nullopt;
  if (v.is_number_integer()) {
    const auto n = v.get<long long>();
    if (n < 0) return std::nullopt;
    return n;
  }
  if (v.is_string()) {
    auto s = trim(v.get<std::string>());
    std::string lower = s;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s.empty() || lower == "none" || lower == "null" || lower == "-1") return std::nullopt;
    std::size_t pos = 0;
    long long n = 0;
    try {
      n = std::stoll(s, &pos);
    } catch (const std::exception&) {
      throw ParseError("assignment '" + s + "' is not an index", std::string(raw));
    }
    if (pos != s.size()) throw ParseError("assignment '" + s + "' is not a single index", std::string(raw));
    if (n < 0) return std::nullopt;
    return n;
  }
  throw ParseError("assignment must be an index", std::string(raw));
}

AssignmentChoice decode_assignment(const json& obj, std::string_view raw) {
  const auto& v = require_field(obj, "assignments", raw);
  if (v.is_array()) {
    if (v.empty()) return AssignmentChoice{};
    if (v.size() > 1) throw ParseError("assignment names more than one factor", std::string(raw));
    return AssignmentChoice{decode_index_token(v[0], raw)};
  }
  return AssignmentChoice{decode_index_token(v, raw)};
}

InfluenceList decode_influences(const json& obj, std::string_view raw) {
  const auto& arr = require_field(obj, "influences", raw);
  if (!arr.is_array()) throw ParseError("'influences' must be an array", std::string(raw));
  InfluenceList out;
  for (const auto& item : arr) {
    if (!item.is_object()) throw ParseError("influence entries must be objects", std::string(raw));
    const auto& idx = require_field(item, "feature_index", raw);
    if (!idx.is_number_integer()) throw ParseError("feature_index must be an integer", std::string(raw));
    const auto& infl = require_field(item, "influenced", raw);
    if (!infl.is_boolean()) throw ParseError("influenced must be a boolean", std::string(raw));

    IndexedJudgment j;
    j.feature_index = idx.get<long long>();
    j.judgment.influenced = infl.get<bool>();
    if (j.judgment.influenced) {
      const auto label = require_string(require_field(item, "evaluation", raw), "evaluation", raw);
      auto p = polarity_from_string(label);
      if (!p) throw ParseError("evaluation '" + label + "' is not one of pos/neu/neg", std::string(raw));
      j.judgment.evaluation = *p;
    }
    out.items.push_back(j);
  }
  return out;
}

ReasoningText decode_reasoning(const json& obj, std::string_view raw) {
  auto text = require_string(require_field(obj, "reasoning", raw), "reasoning", raw);
  if (trim(text).empty()) throw ParseError("reasoning is empty", std::string(raw));
  return ReasoningText{text};
}

GenerationOutput decode_generation(const json& obj, std::string_view raw, const SchemaOptions& opts) {
  GenerationOutput out;
  const auto& answer = require_field(obj, opts.answer_field.c_str(), raw);
  if (answer.is_string()) {
    out.answer = answer.get<std::string>();
  } else if (answer.is_number()) {
    out.answer = answer.dump();
  } else {
    throw ParseError("'" + opts.answer_field + "' must be a string or number", std::string(raw));
  }
  if (auto it = obj.find("reasoning"); it != obj.end() && !it->is_null()) {
    out.reasoning = require_string(*it, "reasoning", raw);
  }
  if (opts.require_reasoning && (!out.reasoning || trim(*out.reasoning).empty())) {
    throw ParseError("generation lacks a reasoning string", std::string(raw));
  }
  if (trim(out.answer).empty()) throw ParseError("generation answer is empty", std::string(raw));
  return out;
}

}  // namespace

StructuredValue parse_structured(SchemaId schema, std::string_view completion, const SchemaOptions& opts) {
  const json obj = parse_json_lenient(completion);
  switch (schema) {
    case SchemaId::features: return decode_features(obj, completion);
    case SchemaId::factor_proposals: return decode_proposals(obj, completion);
    case SchemaId::assignment: return decode_assignment(obj, completion);
    case SchemaId::influences: return decode_influences(obj, completion);
    case SchemaId::reasoning: return decode_reasoning(obj, completion);
    case SchemaId::generation: return decode_generation(obj, completion, opts);
  }
  throw Error("unknown schema");
}

std::string serialize_structured(const StructuredValue& value, const SchemaOptions& opts) {
  json j = std::visit(
      [&](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, FeatureList>) {
          json arr = json::array();
          for (const auto& f : v.features) {
            json item = {{"feature_name", f.name}, {"context", f.context}};
            if (f.factor_labels.size() == 1) item["factor"] = f.factor_labels.front();
            if (f.factor_labels.size() > 1) item["factor"] = f.factor_labels;
            arr.push_back(std::move(item));
          }
          return json{{"features", arr}};
        } else if constexpr (std::is_same_v<T, ProposalList>) {
          return json{{"factors", v.labels}};
        } else if constexpr (std::is_same_v<T, AssignmentChoice>) {
          return json{{"assignments", v.index ? std::to_string(*v.index) : std::string{}}};
        } else if constexpr (std::is_same_v<T, InfluenceList>) {
          json arr = json::array();
          for (const auto& it : v.items) {
            json item = {{"feature_index", it.feature_index}, {"influenced", it.judgment.influenced}};
            if (it.judgment.evaluation) item["evaluation"] = to_string(*it.judgment.evaluation);
            arr.push_back(std::move(item));
          }
          return json{{"influences", arr}};
        } else if constexpr (std::is_same_v<T, ReasoningText>) {
          return json{{"reasoning", v.reasoning}};
        } else {
          json out = {{opts.answer_field, v.answer}};
          if (v.reasoning) out["reasoning"] = *v.reasoning;
          return out;
        }
      },
      value);
  return j.dump();
}

}  // namespace rpm
