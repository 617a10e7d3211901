#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sandwichr/unicode.hpp"

namespace sandwichr {

enum class OutputFormat { ReaAns, AnsRea, Sandwich };

inline constexpr std::array<OutputFormat, 3> kOutputFormats{
    OutputFormat::ReaAns, OutputFormat::AnsRea, OutputFormat::Sandwich};

inline std::string_view to_string(OutputFormat f) {
  switch (f) {
    case OutputFormat::ReaAns: return "rea-ans";
    case OutputFormat::AnsRea: return "ans-rea";
    case OutputFormat::Sandwich: return "sandwich";
  }
  return "?";
}

inline OutputFormat parse_output_format(std::string_view s) {
  for (OutputFormat f : kOutputFormats)
    if (to_string(f) == s) return f;
  throw std::invalid_argument("unknown output format: " + std::string(s));
}

enum class ParseOutcome { StrictOk, PartialAnswer, NoAnswer };

inline std::string_view to_string(ParseOutcome o) {
  switch (o) {
    case ParseOutcome::StrictOk: return "strict_ok";
    case ParseOutcome::PartialAnswer: return "partial_answer";
    case ParseOutcome::NoAnswer: return "no_answer";
  }
  return "?";
}

struct SandwichOutput {
  std::string c_init;
  std::string reasoning;
  std::string c_final;

  friend bool operator==(const SandwichOutput&, const SandwichOutput&) = default;
};

struct ParseResult {
  ParseOutcome outcome = ParseOutcome::NoAnswer;
  OutputFormat format = OutputFormat::Sandwich;
  std::string raw;
  /// StrictOk: every answer of the grammar in order. PartialAnswer: the
  /// first complete answer only. NoAnswer: empty.
  std::vector<std::string> answers;
  std::string reasoning;  // StrictOk only

  bool strict() const { return outcome == ParseOutcome::StrictOk; }

  std::optional<std::string> first_answer() const {
    if (answers.empty()) return std::nullopt;
    return answers.front();
  }

  SandwichOutput sandwich() const {
    if (!strict() || format != OutputFormat::Sandwich)
      throw std::logic_error("not a strict sandwich parse");
    return {answers[0], reasoning, answers[1]};
  }
};

namespace tags {
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kReasoningOpen = "<reasoning>";
inline constexpr std::string_view kReasoningClose = "</reasoning>";
}  // namespace tags

namespace detail {

enum class Tag { AnswerOpen, AnswerClose, ReasoningOpen, ReasoningClose };

struct TagHit {
  Tag tag;
  size_t begin;
  size_t end;
};

inline std::vector<TagHit> scan_tags(std::string_view s) {
  static constexpr std::array<std::pair<Tag, std::string_view>, 4> kTags{{
      {Tag::AnswerOpen, tags::kAnswerOpen},
      {Tag::AnswerClose, tags::kAnswerClose},
      {Tag::ReasoningOpen, tags::kReasoningOpen},
      {Tag::ReasoningClose, tags::kReasoningClose},
  }};
  std::vector<TagHit> hits;
  for (size_t pos = s.find('<'); pos != std::string_view::npos; pos = s.find('<', pos + 1)) {
    for (const auto& [tag, literal] : kTags) {
      if (s.compare(pos, literal.size(), literal) == 0) {
        hits.push_back({tag, pos, pos + literal.size()});
        break;
      }
    }
  }
  return hits;
}

inline bool blank(std::string_view s) {
  for (char c : s)
    if (!text::is_ascii_space(c)) return false;
  return true;
}

inline std::vector<Tag> grammar(OutputFormat f) {
  using enum Tag;
  switch (f) {
    case OutputFormat::ReaAns: return {ReasoningOpen, ReasoningClose, AnswerOpen, AnswerClose};
    case OutputFormat::AnsRea: return {AnswerOpen, AnswerClose, ReasoningOpen, ReasoningClose};
    case OutputFormat::Sandwich:
      return {AnswerOpen, AnswerClose, ReasoningOpen, ReasoningClose, AnswerOpen, AnswerClose};
  }
  return {};
}

inline std::optional<std::string> first_answer(std::string_view s, const std::vector<TagHit>& hits) {
  const TagHit* open = nullptr;
  for (const auto& h : hits) {
    if (h.tag == Tag::AnswerOpen) {
      open = &h;
    } else if (h.tag == Tag::AnswerClose && open) {
      return std::string(text::trim(s.substr(open->end, h.begin - open->end)));
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Content of the first `<answer>...</answer>` span to close (paired with the
/// nearest preceding opening tag), trimmed.
inline std::optional<std::string> first_answer(std::string_view s) {
  return detail::first_answer(s, detail::scan_tags(s));
}

/// Classifies `text` against the tag grammar of `fmt`. StrictOk requires the
/// exact tag sequence with nothing but ASCII whitespace around and between
/// the tagged blocks.
inline ParseResult parse(std::string_view s, OutputFormat fmt) {
  ParseResult r;
  r.format = fmt;
  r.raw = std::string(s);
  const auto hits = detail::scan_tags(s);
  const auto expected = detail::grammar(fmt);

  bool strict = hits.size() == expected.size();
  for (size_t k = 0; strict && k < hits.size(); ++k) strict = hits[k].tag == expected[k];
  if (strict) {
    // Gaps: before the first tag, between each close and the next open, after the last.
    strict = detail::blank(s.substr(0, hits.front().begin)) &&
             detail::blank(s.substr(hits.back().end));
    for (size_t k = 1; strict && k + 1 < hits.size(); k += 2)
      strict = detail::blank(s.substr(hits[k].end, hits[k + 1].begin - hits[k].end));
  }
  if (strict) {
    r.outcome = ParseOutcome::StrictOk;
    for (size_t k = 0; k < hits.size(); k += 2) {
      std::string inner(text::trim(s.substr(hits[k].end, hits[k + 1].begin - hits[k].end)));
      if (hits[k].tag == detail::Tag::AnswerOpen)
        r.answers.push_back(std::move(inner));
      else
        r.reasoning = std::move(inner);
    }
    return r;
  }
  if (auto a = detail::first_answer(s, hits)) {
    r.outcome = ParseOutcome::PartialAnswer;
    r.answers.push_back(std::move(*a));
  }
  return r;
}

inline std::string serialize(const SandwichOutput& out) {
  std::string s;
  s.append(tags::kAnswerOpen).append(out.c_init).append(tags::kAnswerClose).append("\n");
  s.append(tags::kReasoningOpen).append(out.reasoning).append(tags::kReasoningClose).append("\n");
  s.append(tags::kAnswerOpen).append(out.c_final).append(tags::kAnswerClose);
  return s;
}

/// Renders a StrictOk parse back into canonical text for its format.
inline std::string serialize(const ParseResult& p) {
  if (!p.strict()) throw std::invalid_argument("only StrictOk parses can be serialized");
  auto answer = [](const std::string& a) {
    return std::string(tags::kAnswerOpen) + a + std::string(tags::kAnswerClose);
  };
  const std::string reasoning =
      std::string(tags::kReasoningOpen) + p.reasoning + std::string(tags::kReasoningClose);
  switch (p.format) {
    case OutputFormat::ReaAns: return reasoning + "\n" + answer(p.answers[0]);
    case OutputFormat::AnsRea: return answer(p.answers[0]) + "\n" + reasoning;
    case OutputFormat::Sandwich: return serialize(p.sandwich());
  }
  return {};
}

/// Turns a reasoning-first trace into sandwich text whose initial and final
/// answers are both the trace's answer.
inline std::string restructure_to_sandwich(const ParseResult& rea_ans) {
  if (!rea_ans.strict() || rea_ans.format != OutputFormat::ReaAns)
    throw std::invalid_argument("restructuring needs a StrictOk rea-ans parse");
  return serialize(SandwichOutput{rea_ans.answers[0], rea_ans.reasoning, rea_ans.answers[0]});
}

// ---------------------------------------------------------------------------
// Prompt templates

inline constexpr std::string_view kQueryPlaceholder = "[original query]";

struct PromptTemplates {
  std::string rea_ans =
      "You are a Chinese text error correction tool that can detect and correct errors in the "
      "text. Please check the errors in the following text, correct them, modify only the "
      "erroneous parts while keeping the original sentence structure as much as possible, "
      "provide your reasoning process, and output the corrected version. Please strictly use "
      "the following format for your reply: <reasoning> (briefly analyze the location, type, and "
      "basis of the error) </reasoning> \\n <answer> (output the corrected full text) </answer>. "
      "[original query]";
  std::string ans_rea =
      "You are a Chinese text error correction tool that can detect and correct errors in the "
      "text. Please check the errors in the following text, correct them, modify only the "
      "erroneous parts while keeping the original sentence structure as much as possible, first "
      "output the corrected version, and then provide your reasoning process. Please strictly "
      "use the following format for your reply: <answer> (output the corrected full text) "
      "</answer> \\n <reasoning> (briefly analyze the location, type, and basis of the error) "
      "</reasoning>. [original query]";
  std::string sandwich =
      "You are a Chinese text error correction tool that can detect and correct errors in the "
      "text. Please check the errors in the following text, correct them, modify only the "
      "erroneous parts while keeping the original sentence structure as much as possible, first "
      "output the corrected version, then provide your reasoning process, and finally output "
      "the corrected version again. Please strictly use the following format for your reply: "
      "<answer> (first output the corrected full text) </answer> \\n <reasoning> (briefly "
      "analyze the location, type, and basis of the error) </reasoning> \\n <answer> (output the "
      "corrected full text again) </answer>. [original query]";

  const std::string& get(OutputFormat f) const {
    switch (f) {
      case OutputFormat::ReaAns: return rea_ans;
      case OutputFormat::AnsRea: return ans_rea;
      case OutputFormat::Sandwich: return sandwich;
    }
    return sandwich;
  }

  /// Overrides from a JSON object keyed by format name. Every template must
  /// contain the query placeholder.
  static PromptTemplates from_json(const nlohmann::json& j) {
    PromptTemplates t;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto tpl = it.value().get<std::string>();
      if (tpl.find(kQueryPlaceholder) == std::string::npos)
        throw std::invalid_argument("template '" + it.key() + "' lacks the query placeholder");
      switch (parse_output_format(it.key())) {
        case OutputFormat::ReaAns: t.rea_ans = tpl; break;
        case OutputFormat::AnsRea: t.ans_rea = tpl; break;
        case OutputFormat::Sandwich: t.sandwich = tpl; break;
      }
    }
    return t;
  }

  static PromptTemplates load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return from_json(nlohmann::json::parse(in));
  }
};

inline std::string render_prompt(std::string_view q_noise, OutputFormat fmt,
                                 const PromptTemplates& templates = {}) {
  std::string out = templates.get(fmt);
  const auto at = out.find(kQueryPlaceholder);
  if (at != std::string::npos) out.replace(at, kQueryPlaceholder.size(), q_noise);
  return out;
}

}  // namespace sandwichr
