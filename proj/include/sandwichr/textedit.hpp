#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sandwichr/unicode.hpp"

namespace sandwichr {

/// Replace source units [start, end) with `replacement`.
struct Edit {
  size_t start = 0;
  size_t end = 0;
  std::vector<std::string> replacement;

  friend bool operator==(const Edit&, const Edit&) = default;
  friend auto operator<=>(const Edit&, const Edit&) = default;
};

struct EditSet {
  std::string source;
  text::UnitMode mode = text::UnitMode::Grapheme;
  std::vector<std::string> source_units;
  std::vector<Edit> edits;  // sorted by start, non-overlapping

  bool empty() const { return edits.empty(); }
  size_t size() const { return edits.size(); }
};

/// Alignment operations. The enumerator order is the tie-break order.
enum class AlignOp : uint8_t { Sub, Del, Ins, Match };

/// Minimum-cost alignment (unit costs) of two unit sequences. Among all
/// minimum-cost operation sequences the lexicographically smallest one under
/// Sub < Del < Ins < Match is returned: edits sit as far left as possible and
/// substitution wins over deletion, which wins over insertion.
inline std::vector<AlignOp> align_units(std::span<const std::string> src,
                                        std::span<const std::string> tgt) {
  const size_t n = src.size();
  const size_t m = tgt.size();
  const size_t w = m + 1;
  // suffix[i*w + j] = cost of aligning src[i:] with tgt[j:]
  std::vector<uint32_t> suffix((n + 1) * w);
  for (size_t i = n + 1; i-- > 0;) {
    for (size_t j = m + 1; j-- > 0;) {
      uint32_t& c = suffix[i * w + j];
      if (i == n) {
        c = static_cast<uint32_t>(m - j);
      } else if (j == m) {
        c = static_cast<uint32_t>(n - i);
      } else {
        const uint32_t diag = suffix[(i + 1) * w + j + 1] + (src[i] == tgt[j] ? 0 : 1);
        c = std::min({diag, suffix[(i + 1) * w + j] + 1, suffix[i * w + j + 1] + 1});
      }
    }
  }

  std::vector<AlignOp> ops;
  ops.reserve(n + m);
  size_t i = 0, j = 0;
  while (i < n || j < m) {
    const uint32_t here = suffix[i * w + j];
    if (i < n && j < m && src[i] != tgt[j] && suffix[(i + 1) * w + j + 1] + 1 == here) {
      ops.push_back(AlignOp::Sub);
      ++i, ++j;
    } else if (i < n && suffix[(i + 1) * w + j] + 1 == here) {
      ops.push_back(AlignOp::Del);
      ++i;
    } else if (j < m && suffix[i * w + j + 1] + 1 == here) {
      ops.push_back(AlignOp::Ins);
      ++j;
    } else {
      ops.push_back(AlignOp::Match);
      ++i, ++j;
    }
  }
  return ops;
}

/// Collapses runs of adjacent non-match operations into span edits.
inline std::vector<Edit> merge_ops(std::span<const AlignOp> ops,
                                   std::span<const std::string> tgt) {
  std::vector<Edit> edits;
  size_t i = 0, j = 0;
  bool open = false;
  for (AlignOp op : ops) {
    if (op == AlignOp::Match) {
      open = false;
      ++i, ++j;
      continue;
    }
    if (!open) {
      edits.push_back(Edit{i, i, {}});
      open = true;
    }
    Edit& e = edits.back();
    if (op != AlignOp::Ins) e.end = ++i;
    if (op != AlignOp::Del) e.replacement.push_back(tgt[j++]);
  }
  return edits;
}

inline std::vector<Edit> extract_unit_edits(std::span<const std::string> src,
                                            std::span<const std::string> tgt) {
  return merge_ops(align_units(src, tgt), tgt);
}

/// Edits that turn `source` into `target`. Unit granularity follows the
/// source: grapheme clusters when it has no ASCII whitespace, otherwise
/// whitespace-delimited tokens (with the whitespace runs as units).
inline EditSet extract_edits(std::string_view source, std::string_view target,
                             std::optional<text::UnitMode> mode = {}) {
  EditSet set;
  set.source = std::string(source);
  set.mode = mode.value_or(text::unit_mode_for(source));
  set.source_units = text::edit_units(source, set.mode);
  const auto tgt = text::edit_units(target, set.mode);
  set.edits = extract_unit_edits(set.source_units, tgt);
  return set;
}

inline std::vector<std::string> apply_unit_edits(std::span<const std::string> src,
                                                 std::span<const Edit> edits) {
  std::vector<std::string> out;
  size_t i = 0;
  for (const Edit& e : edits) {
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(i),
               src.begin() + static_cast<std::ptrdiff_t>(e.start));
    out.insert(out.end(), e.replacement.begin(), e.replacement.end());
    i = e.end;
  }
  out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(i), src.end());
  return out;
}

inline std::string apply_edits(const EditSet& set) {
  std::string out;
  for (const auto& u : apply_unit_edits(set.source_units, set.edits)) out += u;
  return out;
}

/// Precision-weighted F-measure (beta = 0.5) over exact span-edit matches
/// relative to `q_noise`. `mode` forces the unit granularity; by default it
/// follows `q_noise`.
inline double f_half_score(std::string_view hypothesis, std::string_view q_noise,
                           std::string_view q_clean, std::optional<text::UnitMode> mode = {}) {
  const EditSet hyp = extract_edits(q_noise, hypothesis, mode);
  const EditSet gold = extract_edits(q_noise, q_clean, mode);
  if (hyp.empty() && gold.empty()) return 1.0;
  if (hyp.empty() || gold.empty()) return 0.0;
  // Both lists are sorted by start and non-overlapping, so a merge walk works.
  size_t tp = 0;
  auto h = hyp.edits.begin();
  auto g = gold.edits.begin();
  while (h != hyp.edits.end() && g != gold.edits.end()) {
    if (*h == *g) {
      ++tp, ++h, ++g;
    } else if (*h < *g) {
      ++h;
    } else {
      ++g;
    }
  }
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(hyp.size());
  const double r = static_cast<double>(tp) / static_cast<double>(gold.size());
  constexpr double beta2 = 0.25;
  return (1.0 + beta2) * p * r / (beta2 * p + r);
}

/// Exact match after NFC and outer-whitespace trim.
inline int accuracy(std::string_view hypothesis, std::string_view q_clean) {
  return text::equivalent(hypothesis, q_clean) ? 1 : 0;
}

/// Optimal-string-alignment distance (adjacent transpositions cost 1).
inline size_t osa_distance(std::span<const std::string> a, std::span<const std::string> b) {
  const size_t n = a.size(), m = b.size();
  std::vector<std::vector<size_t>> d(n + 1, std::vector<size_t>(m + 1));
  for (size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      const size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost});
      if (i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1])
        d[i][j] = std::min(d[i][j], d[i - 2][j - 2] + 1);
    }
  }
  return d[n][m];
}

}  // namespace sandwichr
