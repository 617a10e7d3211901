#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/brkiter.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utext.h>
#include <unicode/utf8.h>

namespace sandwichr::text {

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r';
}

inline bool has_ascii_space(std::string_view s) {
  for (char c : s)
    if (is_ascii_space(c)) return true;
  return false;
}

inline bool is_ascii(std::string_view s) {
  for (char c : s)
    if (static_cast<unsigned char>(c) >= 0x80) return false;
  return true;
}

inline bool is_valid_utf8(std::string_view s) {
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  int32_t i = 0;
  const auto n = static_cast<int32_t>(s.size());
  while (i < n) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c < 0) return false;
  }
  return true;
}

/// NFC normalization. Invalid sequences come back as U+FFFD.
inline std::string nfc(std::string_view s) {
  if (is_ascii(s)) return std::string(s);
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) return std::string(s);
  icu::UnicodeString in = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString out = norm->normalize(in, status);
  if (U_FAILURE(status)) return std::string(s);
  std::string result;
  out.toUTF8String(result);
  return result;
}

/// Strips leading and trailing Unicode White_Space.
inline std::string_view trim(std::string_view s) {
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const auto n = static_cast<int32_t>(s.size());
  int32_t begin = 0;
  while (begin < n) {
    int32_t next = begin;
    UChar32 c;
    U8_NEXT(p, next, n, c);
    if (c < 0 || !u_isUWhiteSpace(c)) break;
    begin = next;
  }
  int32_t end = n;
  while (end > begin) {
    int32_t prev = end;
    UChar32 c;
    U8_PREV(p, begin, prev, c);
    if (c < 0 || !u_isUWhiteSpace(c)) break;
    end = prev;
  }
  return s.substr(static_cast<size_t>(begin), static_cast<size_t>(end - begin));
}

/// Comparison key shared by the accuracy metric and the consistency reward.
inline std::string normalized(std::string_view s) {
  return std::string(trim(nfc(s)));
}

inline bool equivalent(std::string_view a, std::string_view b) {
  return normalized(a) == normalized(b);
}

namespace detail {

struct BreakIteratorDeleter {
  void operator()(icu::BreakIterator* it) const { delete it; }
};

inline icu::BreakIterator& grapheme_iterator() {
  thread_local std::unique_ptr<icu::BreakIterator, BreakIteratorDeleter> it = [] {
    UErrorCode status = U_ZERO_ERROR;
    std::unique_ptr<icu::BreakIterator, BreakIteratorDeleter> p(
        icu::BreakIterator::createCharacterInstance(icu::Locale::getRoot(), status));
    if (U_FAILURE(status)) p.reset();
    return p;
  }();
  return *it;
}

}  // namespace detail

/// Extended grapheme clusters, as byte slices of `s`.
inline std::vector<std::string> graphemes(std::string_view s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  if (is_ascii(s)) {
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '\r' && i + 1 < s.size() && s[i + 1] == '\n') {
        out.emplace_back("\r\n");
        ++i;
      } else {
        out.emplace_back(1, s[i]);
      }
    }
    return out;
  }
  UErrorCode status = U_ZERO_ERROR;
  UText* ut = utext_openUTF8(nullptr, s.data(), static_cast<int64_t>(s.size()), &status);
  if (U_FAILURE(status)) return {std::string(s)};
  auto& it = detail::grapheme_iterator();
  it.setText(ut, status);
  int32_t start = it.first();
  for (int32_t end = it.next(); end != icu::BreakIterator::DONE; end = it.next()) {
    out.emplace_back(s.substr(static_cast<size_t>(start), static_cast<size_t>(end - start)));
    start = end;
  }
  utext_close(ut);
  return out;
}

/// Maximal runs of ASCII whitespace and of non-whitespace, alternating.
inline std::vector<std::string> space_runs(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    const bool ws = is_ascii_space(s[i]);
    size_t j = i + 1;
    while (j < s.size() && is_ascii_space(s[j]) == ws) ++j;
    out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

enum class UnitMode { Grapheme, Token };

inline UnitMode unit_mode_for(std::string_view s) {
  return has_ascii_space(s) ? UnitMode::Token : UnitMode::Grapheme;
}

/// A query split into editable units. `separators` has one more entry than
/// `units`: leading text, the gaps between units, and trailing text.
/// In grapheme mode every separator is empty.
struct Segmented {
  UnitMode mode = UnitMode::Grapheme;
  std::vector<std::string> units;
  std::vector<std::string> separators;

  std::string join() const {
    std::string out = separators.empty() ? std::string() : separators.front();
    for (size_t i = 0; i < units.size(); ++i) {
      out += units[i];
      out += separators[i + 1];
    }
    return out;
  }
};

inline Segmented segment(std::string_view s, UnitMode mode) {
  Segmented seg;
  seg.mode = mode;
  if (mode == UnitMode::Grapheme) {
    seg.units = graphemes(s);
    seg.separators.assign(seg.units.size() + 1, std::string());
    return seg;
  }
  seg.separators.emplace_back();
  for (auto& run : space_runs(s)) {
    if (is_ascii_space(run.front())) {
      seg.separators.back() += run;
    } else {
      seg.units.push_back(std::move(run));
      seg.separators.emplace_back();
    }
  }
  return seg;
}

inline Segmented segment(std::string_view s) { return segment(s, unit_mode_for(s)); }

/// Units used for alignment. Token mode keeps whitespace runs as their own
/// units so that alignments always reproduce the target byte-for-byte.
inline std::vector<std::string> edit_units(std::string_view s, UnitMode mode) {
  return mode == UnitMode::Grapheme ? graphemes(s) : space_runs(s);
}

}  // namespace sandwichr::text
