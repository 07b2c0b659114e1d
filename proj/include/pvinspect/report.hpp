#pragma once

// Structured diagnostic reports: a <think> block of enumerated reasoning steps
// followed by an <answer> block of labeled fields.
//
//   <think>
//   Step 1: ...
//   Step 2: ...
//   </think>
//   <answer>
//   class: crack
//   probabilities: crack=0.900, finger=0.100
//   root_cause: ...
//   visual_evidence: ...
//   recommended_action: ...
//   </answer>
//
// A step is a think-block line matching `Step <int>:` (case-insensitive,
// optional leading whitespace). Answer fields are `key: value` lines in any
// order; unrecognized lines are kept verbatim in `extra`.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "pvinspect/error.hpp"
#include "pvinspect/taxonomy.hpp"

namespace pvinspect {

inline constexpr std::string_view kReportGrammarVersion = "report-grammar/1";

// Tolerance on |sum(p) - 1| for a probability field.
inline constexpr double kProbSumTolerance = 0.01;

// Truncation threshold: chains with fewer unique steps are penalized.
inline constexpr std::size_t kMinReasoningSteps = 4;

using ProbabilityMap = std::map<DefectClass, double>;

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const Span&) const = default;
};

struct ReasoningStep {
  int index = 0;
  std::string text;

  bool operator==(const ReasoningStep&) const = default;
};

struct ThinkBlock {
  std::vector<ReasoningStep> steps;
  std::string free_text;

  bool operator==(const ThinkBlock&) const = default;

  std::size_t n_unique_steps() const {
    std::set<int> seen;
    for (const auto& s : steps) seen.insert(s.index);
    return seen.size();
  }
};

struct AnswerBlock {
  DefectClass predicted_class = DefectClass::CleanPanel;
  std::optional<ProbabilityMap> probabilities;
  // Raw field text when a probabilities line was present but unparseable.
  std::optional<std::string> malformed_probabilities;
  std::optional<std::string> root_cause;
  std::optional<std::string> visual_evidence;
  std::optional<std::string> recommended_action;
  std::string extra;

  bool operator==(const AnswerBlock&) const = default;
};

// Character offsets into raw_text. Not part of report equality.
struct SourceMap {
  Span think;
  Span answer;
  std::vector<Span> steps;
  std::map<std::string, Span, std::less<>> fields;
};

struct DiagnosticReport {
  ThinkBlock think;
  AnswerBlock answer;
  std::string raw_text;
  SourceMap source;

  std::size_t n_steps() const { return think.n_unique_steps(); }

  // Field-level equality; raw text and offsets are ignored.
  friend bool operator==(const DiagnosticReport& a, const DiagnosticReport& b) {
    return a.think == b.think && a.answer == b.answer;
  }
};

enum class SchemaErrorKind { MissingThink, MissingAnswer, DuplicateBlocks, MisorderedBlocks, UnparseableClass };

inline constexpr std::string_view to_string(SchemaErrorKind k) noexcept {
  switch (k) {
    case SchemaErrorKind::MissingThink: return "missing_think";
    case SchemaErrorKind::MissingAnswer: return "missing_answer";
    case SchemaErrorKind::DuplicateBlocks: return "duplicate_blocks";
    case SchemaErrorKind::MisorderedBlocks: return "misordered_blocks";
    case SchemaErrorKind::UnparseableClass: return "unparseable_class";
  }
  return "unknown";
}

class SchemaError : public Error {
 public:
  SchemaError(SchemaErrorKind kind, const std::string& message)
      : Error(ErrorCategory::Input, "SchemaError", std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  SchemaErrorKind schema_kind() const noexcept { return kind_; }

 private:
  SchemaErrorKind kind_;
};

namespace detail {

inline bool iequals_prefix(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
  return true;
}

// Calls fn(line, offset) for each line of `text`; offset is relative to `base`.
template <typename Fn>
void for_each_line(std::string_view text, std::size_t base, Fn&& fn) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(line, base + pos);
    pos = nl + 1;
  }
}

// Recognizes `Step <int>: text`. Returns (index, text) for positive indices.
inline std::optional<ReasoningStep> match_step(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  if (!iequals_prefix(line.substr(i), "step")) return std::nullopt;
  i += 4;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  const std::size_t digits_begin = i;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == digits_begin || i - digits_begin > 9) return std::nullopt;
  int index = 0;
  std::from_chars(line.data() + digits_begin, line.data() + i, index);
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  if (i >= line.size() || line[i] != ':' || index <= 0) return std::nullopt;
  return ReasoningStep{index, trim(line.substr(i + 1))};
}

inline std::string field_key(std::string_view raw) {
  std::string key;
  for (char ch : trim(raw)) {
    const auto u = static_cast<unsigned char>(ch);
    key.push_back(std::isspace(u) || ch == '-' ? '_' : static_cast<char>(std::tolower(u)));
  }
  return key;
}

inline bool is_answer_key(std::string_view key) {
  return key == "class" || key == "probabilities" || key == "root_cause" || key == "visual_evidence" ||
         key == "recommended_action";
}

inline std::optional<double> parse_probability_value(std::string_view s) {
  std::string t = trim(s);
  bool percent = false;
  if (!t.empty() && t.back() == '%') {
    percent = true;
    t.pop_back();
    t = trim(t);
  }
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return percent ? v / 100.0 : v;
}

}  // namespace detail

// Parses `name=value, name=value`. Separators may be ',' or ';'; values may be
// fractions or percentages. Returns nullopt for unknown classes, duplicate
// classes, non-numeric values or values outside [0, 1].
inline std::optional<ProbabilityMap> parse_probabilities(std::string_view text) {
  ProbabilityMap out;
  std::string_view rest = text;
  bool any = false;
  while (!rest.empty()) {
    std::size_t cut = rest.find_first_of(",;");
    std::string_view item = rest.substr(0, cut);
    rest = cut == std::string_view::npos ? std::string_view{} : rest.substr(cut + 1);
    if (detail::trim(item).empty()) continue;
    const std::size_t eq = item.find_first_of("=:");
    if (eq == std::string_view::npos) return std::nullopt;
    auto cls = try_parse_label(item.substr(0, eq));
    auto value = detail::parse_probability_value(item.substr(eq + 1));
    if (!cls || !value || *value < 0.0 || *value > 1.0) return std::nullopt;
    if (!out.emplace(*cls, *value).second) return std::nullopt;
    any = true;
  }
  if (!any) return std::nullopt;
  return out;
}

inline double probability_sum(const ProbabilityMap& p) {
  double s = 0.0;
  for (const auto& [c, v] : p) s += v;
  return s;
}

// True iff |sum - 1| <= 0.01. The 1e-9 slack absorbs binary rounding of
// decimal inputs such as 0.99.
inline bool probability_sum_ok(const ProbabilityMap& p) {
  return std::abs(probability_sum(p) - 1.0) <= kProbSumTolerance + 1e-9;
}

namespace detail {

struct TagPositions {
  std::vector<std::size_t> open_think, close_think, open_answer, close_answer;
};

inline TagPositions find_tags(std::string_view text) {
  const std::string lower = to_lower(text);
  auto all = [&](std::string_view tag) {
    std::vector<std::size_t> out;
    for (std::size_t p = lower.find(tag); p != std::string::npos; p = lower.find(tag, p + tag.size()))
      out.push_back(p);
    return out;
  };
  return {all("<think>"), all("</think>"), all("<answer>"), all("</answer>")};
}

inline void parse_think_content(std::string_view content, std::size_t base, ThinkBlock& think,
                                std::vector<Span>* step_spans) {
  std::vector<std::string> free_lines;
  for_each_line(content, base, [&](std::string_view line, std::size_t offset) {
    if (auto step = match_step(line)) {
      think.steps.push_back(std::move(*step));
      if (step_spans) step_spans->push_back({offset, offset + line.size()});
    } else if (auto t = trim(line); !t.empty()) {
      free_lines.push_back(std::move(t));
    }
  });
  for (std::size_t i = 0; i < free_lines.size(); ++i) {
    if (i) think.free_text += '\n';
    think.free_text += free_lines[i];
  }
}

struct AnswerFields {
  std::optional<std::string> class_text;
  std::optional<std::string> probabilities_text;
  std::optional<std::string> root_cause, visual_evidence, recommended_action;
  std::string extra;
  std::map<std::string, Span, std::less<>> spans;
};

inline AnswerFields scan_answer_content(std::string_view content, std::size_t base) {
  AnswerFields f;
  std::vector<std::string> extra_lines;
  for_each_line(content, base, [&](std::string_view line, std::size_t offset) {
    const std::string t = trim(line);
    if (t.empty()) return;
    const std::size_t colon = t.find(':');
    std::optional<std::string>* slot = nullptr;
    std::string key;
    if (colon != std::string::npos) {
      key = field_key(std::string_view(t).substr(0, colon));
      if (key == "class") slot = &f.class_text;
      else if (key == "probabilities") slot = &f.probabilities_text;
      else if (key == "root_cause") slot = &f.root_cause;
      else if (key == "visual_evidence") slot = &f.visual_evidence;
      else if (key == "recommended_action") slot = &f.recommended_action;
    }
    if (slot && !slot->has_value()) {
      *slot = trim(std::string_view(t).substr(colon + 1));
      f.spans[key] = {offset, offset + line.size()};
    } else {
      extra_lines.push_back(t);
    }
  });
  for (std::size_t i = 0; i < extra_lines.size(); ++i) {
    if (i) f.extra += '\n';
    f.extra += extra_lines[i];
  }
  return f;
}

}  // namespace detail

inline DiagnosticReport parse_report(std::string_view text) {
  const auto tags = detail::find_tags(text);
  if (tags.open_think.empty() || tags.close_think.empty())
    throw SchemaError(SchemaErrorKind::MissingThink, "expected one <think>...</think> block");
  if (tags.open_answer.empty() || tags.close_answer.empty())
    throw SchemaError(SchemaErrorKind::MissingAnswer, "expected one <answer>...</answer> block");
  if (tags.open_think.size() > 1 || tags.close_think.size() > 1 || tags.open_answer.size() > 1 ||
      tags.close_answer.size() > 1)
    throw SchemaError(SchemaErrorKind::DuplicateBlocks, "each block must appear exactly once");
  const std::size_t ot = tags.open_think[0], ct = tags.close_think[0];
  const std::size_t oa = tags.open_answer[0], ca = tags.close_answer[0];
  if (!(ot < ct && ct < oa && oa < ca))
    throw SchemaError(SchemaErrorKind::MisorderedBlocks, "expected <think>...</think> followed by <answer>...</answer>");

  DiagnosticReport r;
  r.raw_text = std::string(text);
  r.source.think = {ot, ct + 8};
  r.source.answer = {oa, ca + 9};

  const std::size_t think_begin = ot + 7;
  detail::parse_think_content(text.substr(think_begin, ct - think_begin), think_begin, r.think, &r.source.steps);

  const std::size_t answer_begin = oa + 8;
  auto fields = detail::scan_answer_content(text.substr(answer_begin, ca - answer_begin), answer_begin);
  if (!fields.class_text) throw SchemaError(SchemaErrorKind::UnparseableClass, "answer has no class field");
  auto cls = try_parse_label(*fields.class_text);
  if (!cls) throw SchemaError(SchemaErrorKind::UnparseableClass, "unknown class '" + *fields.class_text + "'");

  AnswerBlock& a = r.answer;
  a.predicted_class = *cls;
  if (fields.probabilities_text) {
    a.probabilities = parse_probabilities(*fields.probabilities_text);
    if (!a.probabilities) a.malformed_probabilities = *fields.probabilities_text;
  }
  a.root_cause = std::move(fields.root_cause);
  a.visual_evidence = std::move(fields.visual_evidence);
  a.recommended_action = std::move(fields.recommended_action);
  a.extra = std::move(fields.extra);
  r.source.fields = std::move(fields.spans);
  return r;
}

inline std::optional<DiagnosticReport> try_parse_report(std::string_view text) {
  try {
    return parse_report(text);
  } catch (const SchemaError&) {
    return std::nullopt;
  }
}

inline std::string format_probabilities(const ProbabilityMap& p) {
  std::string out;
  for (DefectClass c : kAllClasses) {
    auto it = p.find(c);
    if (it == p.end()) continue;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", it->second);
    if (!out.empty()) out += ", ";
    out += canonical_name(c);
    out += '=';
    out += buf;
  }
  return out;
}

// Canonical text: free text first, then steps as "Step k:" lines; answer
// fields in fixed order; probabilities in class order with 3 decimals.
inline std::string serialize(const DiagnosticReport& r) {
  std::string out = "<think>\n";
  if (!r.think.free_text.empty()) out += r.think.free_text + "\n";
  for (const auto& s : r.think.steps) {
    out += "Step " + std::to_string(s.index) + ":";
    if (!s.text.empty()) out += " " + s.text;
    out += "\n";
  }
  out += "</think>\n<answer>\n";
  const AnswerBlock& a = r.answer;
  out += "class: " + std::string(canonical_name(a.predicted_class)) + "\n";
  if (a.probabilities)
    out += "probabilities: " + format_probabilities(*a.probabilities) + "\n";
  else if (a.malformed_probabilities)
    out += "probabilities: " + *a.malformed_probabilities + "\n";
  auto field = [&](std::string_view key, const std::optional<std::string>& v) {
    if (v) out += std::string(key) + ": " + *v + "\n";
  };
  field("root_cause", a.root_cause);
  field("visual_evidence", a.visual_evidence);
  field("recommended_action", a.recommended_action);
  if (!a.extra.empty()) out += a.extra + "\n";
  out += "</answer>";
  return out;
}

// ---------------------------------------------------------------------------
// Lints
// ---------------------------------------------------------------------------

enum class LintCode { MissingTag, TruncatedChain, NaPlaceholder, ProbSumViolation, PromptEcho, MalformedField };
enum class Severity { Error, Warning };

inline constexpr std::string_view to_string(LintCode c) noexcept {
  switch (c) {
    case LintCode::MissingTag: return "MissingTag";
    case LintCode::TruncatedChain: return "TruncatedChain";
    case LintCode::NaPlaceholder: return "NaPlaceholder";
    case LintCode::ProbSumViolation: return "ProbSumViolation";
    case LintCode::PromptEcho: return "PromptEcho";
    case LintCode::MalformedField: return "MalformedField";
  }
  return "Unknown";
}

inline constexpr std::string_view to_string(Severity s) noexcept {
  return s == Severity::Error ? "Error" : "Warning";
}

struct LintFinding {
  LintCode code = LintCode::MissingTag;
  Severity severity = Severity::Error;
  Span location;
  std::string message;

  bool operator==(const LintFinding&) const = default;
};

inline bool has_errors(const std::vector<LintFinding>& findings) {
  return std::any_of(findings.begin(), findings.end(),
                     [](const LintFinding& f) { return f.severity == Severity::Error; });
}

namespace detail {

inline bool is_na_placeholder(std::string_view value) {
  std::string key;
  for (char ch : value) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) key.push_back(static_cast<char>(std::tolower(u)));
  }
  return key == "na" || key == "notapplicable";
}

}  // namespace detail

inline std::vector<LintFinding> validate(const DiagnosticReport& r) {
  std::vector<LintFinding> out;
  const AnswerBlock& a = r.answer;
  auto span_of = [&](std::string_view key) {
    auto it = r.source.fields.find(key);
    return it != r.source.fields.end() ? it->second : r.source.answer;
  };

  const std::pair<std::string_view, const std::optional<std::string>*> required[] = {
      {"root_cause", &a.root_cause},
      {"visual_evidence", &a.visual_evidence},
      {"recommended_action", &a.recommended_action},
  };
  for (const auto& [key, value] : required) {
    if (!value->has_value())
      out.push_back({LintCode::MissingTag, Severity::Error, r.source.answer,
                     "answer is missing required field '" + std::string(key) + "'"});
    else if (detail::is_na_placeholder(**value))
      out.push_back({LintCode::NaPlaceholder, Severity::Error, span_of(key),
                     "field '" + std::string(key) + "' is an N/A placeholder"});
  }

  if (a.probabilities) {
    if (!probability_sum_ok(*a.probabilities)) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "probabilities sum to %.4f", probability_sum(*a.probabilities));
      out.push_back({LintCode::ProbSumViolation, Severity::Error, span_of("probabilities"), buf});
    }
  } else if (a.malformed_probabilities) {
    out.push_back({LintCode::MalformedField, Severity::Error, span_of("probabilities"),
                   "unparseable probabilities '" + *a.malformed_probabilities + "'"});
  } else {
    out.push_back({LintCode::MissingTag, Severity::Warning, r.source.answer, "answer has no probabilities field"});
  }

  const std::size_t n = r.n_steps();
  if (n < kMinReasoningSteps)
    out.push_back({LintCode::TruncatedChain, Severity::Error, r.source.think,
                   "reasoning chain has " + std::to_string(n) + " unique steps"});

  for (std::size_t i = 0; i < r.think.steps.size(); ++i) {
    if (detail::is_na_placeholder(r.think.steps[i].text)) {
      const Span where = i < r.source.steps.size() ? r.source.steps[i] : r.source.think;
      out.push_back({LintCode::NaPlaceholder, Severity::Error, where,
                     "step " + std::to_string(r.think.steps[i].index) + " is an N/A placeholder"});
    }
  }

  // Reasoning that cites the supplied label instead of visual evidence.
  if (r.source.think.end > r.source.think.begin && r.source.think.end <= r.raw_text.size()) {
    const std::string lower =
        detail::to_lower(std::string_view(r.raw_text).substr(r.source.think.begin,
                                                             r.source.think.end - r.source.think.begin));
    for (std::string_view phrase : {std::string_view("the label is"), std::string_view("told that")}) {
      for (std::size_t p = lower.find(phrase); p != std::string::npos; p = lower.find(phrase, p + 1)) {
        const std::size_t tail_begin = p + phrase.size();
        std::size_t tail_end = lower.find_first_of(".\n", tail_begin);
        if (tail_end == std::string::npos) tail_end = lower.size();
        tail_end = std::min(tail_end, tail_begin + 80);
        const std::string tail = detail::label_key(std::string_view(lower).substr(tail_begin, tail_end - tail_begin));
        for (DefectClass c : kAllClasses) {
          if (tail.find(detail::label_key(canonical_name(c))) != std::string::npos) {
            out.push_back({LintCode::PromptEcho, Severity::Error,
                           {r.source.think.begin + p, r.source.think.begin + tail_end},
                           "reasoning restates the label '" + std::string(canonical_name(c)) + "'"});
            break;
          }
        }
      }
    }
  }

  std::stable_sort(out.begin(), out.end(), [](const LintFinding& x, const LintFinding& y) {
    return std::tuple(x.location.begin, static_cast<int>(x.code), x.location.end) <
           std::tuple(y.location.begin, static_cast<int>(y.code), y.location.end);
  });
  return out;
}

// Parses then validates. A schema error becomes a single MissingTag finding.
inline std::vector<LintFinding> validate_text(std::string_view text) {
  try {
    return validate(parse_report(text));
  } catch (const SchemaError& e) {
    return {{LintCode::MissingTag, Severity::Error, {0, text.size()}, e.what()}};
  }
}

// ---------------------------------------------------------------------------
// Lenient scan, used for scoring text that may not satisfy the schema.
// ---------------------------------------------------------------------------

struct ReportScan {
  bool well_formed = false;  // both blocks intact and class parseable
  std::optional<DefectClass> predicted_class;
  std::size_t n_unique_steps = 0;
  bool valid_probabilities = false;
};

inline ReportScan scan_report(std::string_view text) {
  ReportScan s;
  if (auto r = try_parse_report(text)) {
    s.well_formed = true;
    s.predicted_class = r->answer.predicted_class;
    s.n_unique_steps = r->n_steps();
    s.valid_probabilities = r->answer.probabilities && probability_sum_ok(*r->answer.probabilities);
    return s;
  }
  const auto tags = detail::find_tags(text);
  if (!tags.open_think.empty()) {
    const std::size_t b = tags.open_think[0] + 7;
    std::size_t e = text.size();
    for (const auto* v : {&tags.close_think, &tags.open_answer})
      for (std::size_t p : *v)
        if (p >= b) {
          e = std::min(e, p);
          break;
        }
    ThinkBlock think;
    detail::parse_think_content(text.substr(b, e - b), b, think, nullptr);
    s.n_unique_steps = think.n_unique_steps();
  }
  if (!tags.open_answer.empty()) {
    const std::size_t b = tags.open_answer[0] + 8;
    std::size_t e = text.size();
    for (std::size_t p : tags.close_answer)
      if (p >= b) {
        e = p;
        break;
      }
    auto fields = detail::scan_answer_content(text.substr(b, e - b), b);
    if (fields.class_text) s.predicted_class = try_parse_label(*fields.class_text);
    if (fields.probabilities_text)
      if (auto p = parse_probabilities(*fields.probabilities_text)) s.valid_probabilities = probability_sum_ok(*p);
  }
  return s;
}

}  // namespace pvinspect
