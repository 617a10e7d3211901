#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "sandwichr/corpus.hpp"
#include "sandwichr/format.hpp"
#include "sandwichr/textedit.hpp"
#include "sandwichr/unicode.hpp"

namespace sandwichr {

/// Weights of the accuracy term and of the joint format-and-consistency term.
struct RewardWeights {
  double w_acc = 1.0;
  double w_fc = 1.0;

  void validate() const {
    if (w_acc < 0 || w_fc < 0) throw std::invalid_argument("reward weights must be non-negative");
    if (w_acc == 0 && w_fc == 0) throw std::invalid_argument("reward weights cannot both be zero");
  }
};

struct RewardBreakdown {
  double r_acc = 0;
  int r_fmt = 0;
  int r_cons = 0;
  int r_unified = 0;
  double r_total = 0;
};

inline nlohmann::ordered_json to_json(const RewardBreakdown& b) {
  return {{"r_acc", b.r_acc}, {"r_fmt", b.r_fmt}, {"r_cons", b.r_cons},
          {"r_unified", b.r_unified}, {"r_total", b.r_total}};
}

/// The initial correction of a sandwich-grammar parse: the strict first
/// answer, or the first complete answer of a partial output.
inline std::optional<std::string> initial_correction(const ParseResult& parse) {
  return parse.first_answer();
}

inline double accuracy_reward(const ParseResult& parse, const QueryPair& pair) {
  const auto c_init = initial_correction(parse);
  if (!c_init) return 0.0;
  if (text::equivalent(*c_init, pair.q_noise)) return 0.0;
  return f_half_score(*c_init, pair.q_noise, pair.q_clean);
}

inline int format_reward(const ParseResult& parse) {
  return parse.strict() && parse.format == OutputFormat::Sandwich ? 1 : 0;
}

inline int consistency_reward(const SandwichOutput& out) {
  return text::equivalent(out.c_init, out.c_final) ? 1 : 0;
}

inline RewardBreakdown total_reward(std::string_view completion, const QueryPair& pair,
                                    const RewardWeights& w = {}) {
  const ParseResult parse = sandwichr::parse(completion, OutputFormat::Sandwich);
  RewardBreakdown b;
  b.r_acc = accuracy_reward(parse, pair);
  b.r_fmt = format_reward(parse);
  b.r_cons = b.r_fmt ? consistency_reward(parse.sandwich()) : 0;
  b.r_unified = b.r_fmt * b.r_cons;
  b.r_total = w.w_acc * b.r_acc + w.w_fc * b.r_unified;
  return b;
}

}  // namespace sandwichr
