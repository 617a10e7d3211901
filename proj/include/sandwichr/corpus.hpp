#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "sandwichr/rng.hpp"
#include "sandwichr/textedit.hpp"
#include "sandwichr/unicode.hpp"

namespace sandwichr {

enum class ErrorType { WrongWords, MissingWords, DisorderWords };

inline constexpr std::array<ErrorType, 3> kErrorTypes{
    ErrorType::WrongWords, ErrorType::MissingWords, ErrorType::DisorderWords};

inline std::string_view to_string(ErrorType t) {
  switch (t) {
    case ErrorType::WrongWords: return "WrongWords";
    case ErrorType::MissingWords: return "MissingWords";
    case ErrorType::DisorderWords: return "DisorderWords";
  }
  return "?";
}

inline ErrorType parse_error_type(std::string_view s) {
  for (ErrorType t : kErrorTypes)
    if (to_string(t) == s) return t;
  throw std::invalid_argument("unknown error type: " + std::string(s));
}

enum class Split { Train, Dev, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split: " + std::string(s));
}

struct QueryPair {
  std::string id;
  std::string q_noise;
  std::string q_clean;
  ErrorType error = ErrorType::WrongWords;
  size_t error_pos = 0;
  Split split = Split::Train;

  friend bool operator==(const QueryPair&, const QueryPair&) = default;
};

inline nlohmann::ordered_json to_json(const QueryPair& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["q_noise"] = p.q_noise;
  j["q_clean"] = p.q_clean;
  j["error_type"] = to_string(p.error);
  j["error_pos"] = p.error_pos;
  j["split"] = to_string(p.split);
  return j;
}

inline QueryPair query_pair_from_json(const nlohmann::json& j) {
  QueryPair p;
  p.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  p.q_noise = j.at("q_noise").get<std::string>();
  p.q_clean = j.at("q_clean").get<std::string>();
  p.error = parse_error_type(j.at("error_type").get<std::string>());
  p.error_pos = j.at("error_pos").get<size_t>();
  p.split = j.contains("split") ? parse_split(j.at("split").get<std::string>()) : Split::Test;
  return p;
}

inline std::vector<QueryPair> read_pairs_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<QueryPair> pairs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      pairs.push_back(query_pair_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

inline void write_pairs_jsonl(const std::filesystem::path& path,
                              const std::vector<QueryPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : pairs) out << to_json(p).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Confusion tables

class ConfusionTable {
 public:
  ConfusionTable() = default;

  void add(std::string unit, std::vector<std::string> confusables) {
    std::vector<std::string> kept;
    for (auto& c : confusables)
      if (c != unit && !c.empty() && std::find(kept.begin(), kept.end(), c) == kept.end())
        kept.push_back(std::move(c));
    if (kept.empty())
      throw std::invalid_argument("confusion entry for '" + unit + "' has no distinct unit");
    table_[std::move(unit)] = std::move(kept);
  }

  const std::vector<std::string>* find(const std::string& unit) const {
    auto it = table_.find(unit);
    return it == table_.end() ? nullptr : &it->second;
  }

  bool empty() const { return table_.empty(); }
  size_t size() const { return table_.size(); }

  static ConfusionTable from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("confusion table must be a JSON object");
    ConfusionTable t;
    for (auto it = j.begin(); it != j.end(); ++it)
      t.add(it.key(), it.value().get<std::vector<std::string>>());
    return t;
  }

  static ConfusionTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return from_json(nlohmann::json::parse(in));
  }

 private:
  std::map<std::string, std::vector<std::string>> table_;
};

// ---------------------------------------------------------------------------
// Ingestion

struct CleanQuery {
  std::string id;
  std::string query;
};

struct IngestResult {
  std::vector<CleanQuery> queries;
  std::vector<std::string> diagnostics;
};

enum class CorpusFormat { Tsv, Jsonl };

inline IngestResult ingest_clean(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  IngestResult result;
  std::unordered_set<std::string> seen;
  std::string line;
  size_t lineno = 0;
  auto reject = [&](std::string_view why) {
    result.diagnostics.push_back("line " + std::to_string(lineno) + ": " + std::string(why));
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    if (!text::is_valid_utf8(line)) {
      reject("invalid UTF-8");
      continue;
    }
    std::string id, query;
    if (format == CorpusFormat::Tsv) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        reject("expected id<TAB>query");
        continue;
      }
      id = std::string(text::trim(std::string_view(line).substr(0, tab)));
      query = std::string(text::trim(std::string_view(line).substr(tab + 1)));
    } else {
      try {
        auto j = nlohmann::json::parse(line);
        const auto& jid = j.at("id");
        id = jid.is_string() ? jid.get<std::string>() : jid.dump();
        query = std::string(text::trim(j.at("query").get<std::string>()));
      } catch (const std::exception& e) {
        reject(std::string("bad JSON row: ") + e.what());
        continue;
      }
    }
    if (id.empty()) {
      reject("empty id");
      continue;
    }
    if (query.empty()) {
      reject("empty query");
      continue;
    }
    if (!seen.insert(query).second) continue;
    result.queries.push_back({std::move(id), std::move(query)});
  }
  if (result.queries.empty())
    throw std::runtime_error(path.string() + ": no usable queries");
  return result;
}

// ---------------------------------------------------------------------------
// Error injection

class InjectError : public std::runtime_error {
 public:
  enum class Code { SkipTooShort, NoConfusableUnit, NoDistinctAdjacentPair, InvariantViolation };

  InjectError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

inline std::string_view to_string(InjectError::Code c) {
  switch (c) {
    case InjectError::Code::SkipTooShort: return "too_short";
    case InjectError::Code::NoConfusableUnit: return "no_confusable_unit";
    case InjectError::Code::NoDistinctAdjacentPair: return "no_distinct_adjacent_pair";
    case InjectError::Code::InvariantViolation: return "invariant_violation";
  }
  return "?";
}

struct InjectOptions {
  bool fallback = true;
  /// Sorted distinct units used by the fallback substitution, one list per
  /// unit mode. When the list for a query's mode is empty the units of the
  /// query itself are used.
  std::vector<std::string> grapheme_alphabet;
  std::vector<std::string> token_alphabet;

  const std::vector<std::string>& alphabet(text::UnitMode mode) const {
    return mode == text::UnitMode::Token ? token_alphabet : grapheme_alphabet;
  }
};

/// Collects the sorted set of units appearing in those `queries` that segment
/// in `mode`.
inline std::vector<std::string> corpus_alphabet(const std::vector<CleanQuery>& queries,
                                                text::UnitMode mode) {
  std::set<std::string> units;
  for (const auto& q : queries)
    if (text::unit_mode_for(q.query) == mode)
      for (auto& u : text::segment(q.query, mode).units) units.insert(std::move(u));
  return {units.begin(), units.end()};
}

namespace detail {

inline bool fits_as_unit(const std::string& candidate, text::UnitMode mode) {
  if (candidate.empty() || text::has_ascii_space(candidate)) return false;
  return mode == text::UnitMode::Token || text::graphemes(candidate).size() == 1;
}

inline std::vector<std::string> substitution_candidates(const std::string& unit,
                                                        text::UnitMode mode,
                                                        const ConfusionTable& table,
                                                        const InjectOptions& opts,
                                                        const std::vector<std::string>& own) {
  std::vector<std::string> out;
  if (const auto* list = table.find(unit)) {
    for (const auto& c : *list)
      if (c != unit && fits_as_unit(c, mode)) out.push_back(c);
  }
  if (out.empty() && opts.fallback) {
    const auto& alpha = opts.alphabet(mode).empty() ? own : opts.alphabet(mode);
    for (const auto& c : alpha)
      if (c != unit && fits_as_unit(c, mode)) out.push_back(c);
  }
  return out;
}

}  // namespace detail

/// Applies one error of `kind` at unit `pos`. For WrongWords `replacement`
/// is the substituted unit; it is ignored otherwise.
inline std::string apply_error(const text::Segmented& clean, ErrorType kind, size_t pos,
                               const std::string& replacement = {}) {
  text::Segmented noisy = clean;
  const size_t n = clean.units.size();
  switch (kind) {
    case ErrorType::WrongWords:
      if (pos >= n) throw std::out_of_range("substitution position out of range");
      noisy.units[pos] = replacement;
      break;
    case ErrorType::MissingWords: {
      if (pos >= n || n < 2) throw std::out_of_range("deletion position out of range");
      noisy.units.erase(noisy.units.begin() + static_cast<std::ptrdiff_t>(pos));
      const size_t gap = pos + 1 < n ? pos + 1 : pos;
      noisy.separators.erase(noisy.separators.begin() + static_cast<std::ptrdiff_t>(gap));
      break;
    }
    case ErrorType::DisorderWords:
      if (pos + 1 >= n) throw std::out_of_range("swap position out of range");
      std::swap(noisy.units[pos], noisy.units[pos + 1]);
      break;
  }
  return noisy.join();
}

/// Checks a single-error pair by undoing the declared edit at error_pos.
/// Returns a description of the first violated invariant, if any.
inline std::optional<std::string> validate_pair(const QueryPair& p) {
  if (p.q_noise == p.q_clean) return "q_noise equals q_clean";
  const auto mode = text::unit_mode_for(p.q_clean);
  const auto clean = text::segment(p.q_clean, mode).units;
  auto noisy = text::segment(p.q_noise, mode).units;
  const size_t pos = p.error_pos;
  switch (p.error) {
    case ErrorType::WrongWords:
      if (noisy.size() != clean.size()) return "WrongWords changed the unit count";
      if (pos >= noisy.size() || noisy[pos] == clean[pos]) return "no substitution at error_pos";
      noisy[pos] = clean[pos];
      break;
    case ErrorType::MissingWords:
      if (noisy.size() + 1 != clean.size()) return "MissingWords must drop exactly one unit";
      if (pos >= clean.size()) return "error_pos out of range";
      noisy.insert(noisy.begin() + static_cast<std::ptrdiff_t>(pos), clean[pos]);
      break;
    case ErrorType::DisorderWords:
      if (noisy.size() != clean.size()) return "DisorderWords changed the unit count";
      if (pos + 1 >= noisy.size()) return "error_pos out of range";
      if (noisy[pos] == noisy[pos + 1]) return "swapped units are identical";
      std::swap(noisy[pos], noisy[pos + 1]);
      break;
  }
  if (noisy != clean) return "undoing the edit at error_pos does not restore q_clean";
  return std::nullopt;
}

namespace detail {

inline constexpr int kMaxInjectAttempts = 16;

/// One random injection into `clean`; returns (q_noise, pos).
inline std::pair<std::string, size_t> draw_injection(const text::Segmented& clean, ErrorType kind,
                                                     Rng& rng, const ConfusionTable& table,
                                                     const InjectOptions& opts) {
  const size_t n = clean.units.size();
  switch (kind) {
    case ErrorType::WrongWords: {
      if (n < 1) throw InjectError(InjectError::Code::SkipTooShort, "query has no units");
      std::vector<std::string> own = clean.units;
      std::sort(own.begin(), own.end());
      own.erase(std::unique(own.begin(), own.end()), own.end());
      std::vector<std::pair<size_t, std::vector<std::string>>> eligible;
      for (size_t i = 0; i < n; ++i) {
        auto cands = substitution_candidates(clean.units[i], clean.mode, table, opts, own);
        if (!cands.empty()) eligible.emplace_back(i, std::move(cands));
      }
      if (eligible.empty())
        throw InjectError(InjectError::Code::NoConfusableUnit, "no unit has a confusable substitute");
      const auto& [pos, cands] = eligible[rng.below(eligible.size())];
      return {apply_error(clean, kind, pos, cands[rng.below(cands.size())]), pos};
    }
    case ErrorType::MissingWords: {
      if (n < 2) throw InjectError(InjectError::Code::SkipTooShort, "query shorter than 2 units");
      const size_t pos = rng.below(n);
      return {apply_error(clean, kind, pos), pos};
    }
    case ErrorType::DisorderWords: {
      if (n < 2) throw InjectError(InjectError::Code::SkipTooShort, "query shorter than 2 units");
      std::vector<size_t> pairs;
      for (size_t i = 0; i + 1 < n; ++i)
        if (clean.units[i] != clean.units[i + 1]) pairs.push_back(i);
      if (pairs.empty())
        throw InjectError(InjectError::Code::NoDistinctAdjacentPair, "all adjacent units identical");
      const size_t pos = pairs[rng.below(pairs.size())];
      return {apply_error(clean, kind, pos), pos};
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace detail

/// Produces a noisy variant of `q_clean` carrying exactly `repeat` errors of
/// `kind`. Deterministic in (q_clean, kind, seed, table, options).
inline QueryPair inject_error(std::string_view q_clean, ErrorType kind, uint64_t seed,
                              const ConfusionTable& confusions, const InjectOptions& opts = {},
                              int repeat = 1) {
  if (repeat < 1) throw std::invalid_argument("repeat must be >= 1");
  const auto mode = text::unit_mode_for(q_clean);
  const auto clean = text::segment(q_clean, mode);
  Rng rng(seed);
  for (int attempt = 0; attempt < detail::kMaxInjectAttempts; ++attempt) {
    QueryPair p;
    p.q_clean = std::string(q_clean);
    p.error = kind;
    text::Segmented current = clean;
    for (int k = 0; k < repeat; ++k) {
      auto [noisy, pos] = detail::draw_injection(current, kind, rng, confusions, opts);
      if (k == 0) p.error_pos = pos;
      p.q_noise = std::move(noisy);
      current = text::segment(p.q_noise, mode);
    }
    if (repeat == 1) {
      if (!validate_pair(p)) return p;
    } else if (p.q_noise != p.q_clean &&
               osa_distance(current.units, clean.units) == static_cast<size_t>(repeat)) {
      return p;
    }
  }
  throw InjectError(InjectError::Code::InvariantViolation,
                    "could not produce a valid injection for '" + std::string(q_clean) + "'");
}

// ---------------------------------------------------------------------------
// Dataset construction

using TypeMix = std::array<double, 3>;

/// Largest-remainder apportionment of `total` items by `weights`; ties go to
/// the earlier index.
inline std::vector<size_t> apportion(size_t total, std::span<const double> weights) {
  std::vector<size_t> counts(weights.size());
  std::vector<std::pair<double, size_t>> remainders;
  size_t assigned = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] * static_cast<double>(total);
    counts[i] = static_cast<size_t>(std::floor(exact + 1e-9));
    assigned += counts[i];
    remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });
  for (size_t k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

struct DatasetOptions {
  TypeMix mix{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::array<double, 3> splits{1.0, 0.0, 0.0};  // train, dev, test
  int repeat = 1;
  ConfusionTable confusions;
  bool fallback = true;
};

struct DatasetResult {
  std::vector<QueryPair> pairs;
  std::map<std::string, size_t> skipped;  // reason -> count
};

inline void check_proportions(std::span<const double> p, std::string_view what) {
  double sum = 0;
  for (double x : p) {
    if (x < 0) throw std::invalid_argument(std::string(what) + " must be non-negative");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(what) + " must sum to 1");
}

inline DatasetResult build_dataset(const std::vector<CleanQuery>& clean, uint64_t seed,
                                   const DatasetOptions& opts = {}) {
  if (clean.empty()) throw std::invalid_argument("no clean queries");
  check_proportions(opts.mix, "type mix");
  check_proportions(opts.splits, "split proportions");

  DatasetResult result;
  std::vector<size_t> eligible;
  for (size_t i = 0; i < clean.size(); ++i) {
    if (text::segment(clean[i].query).units.size() < 2)
      ++result.skipped[std::string(to_string(InjectError::Code::SkipTooShort))];
    else
      eligible.push_back(i);
  }

  Rng rng(derive_seed(seed, "types"));
  std::vector<ErrorType> types;
  const auto counts = apportion(eligible.size(), opts.mix);
  for (size_t t = 0; t < kErrorTypes.size(); ++t) types.insert(types.end(), counts[t], kErrorTypes[t]);
  deterministic_shuffle(types, rng);

  InjectOptions inject_opts{opts.fallback, corpus_alphabet(clean, text::UnitMode::Grapheme),
                            corpus_alphabet(clean, text::UnitMode::Token)};
  for (size_t k = 0; k < eligible.size(); ++k) {
    const auto& q = clean[eligible[k]];
    try {
      QueryPair p = inject_error(q.query, types[k], derive_seed(seed, q.id), opts.confusions,
                                 inject_opts, opts.repeat);
      p.id = q.id;
      result.pairs.push_back(std::move(p));
    } catch (const InjectError& e) {
      ++result.skipped[std::string(to_string(e.code()))];
    }
  }

  std::vector<Split> splits;
  const auto split_counts = apportion(result.pairs.size(), opts.splits);
  splits.insert(splits.end(), split_counts[0], Split::Train);
  splits.insert(splits.end(), split_counts[1], Split::Dev);
  splits.insert(splits.end(), split_counts[2], Split::Test);
  Rng split_rng(derive_seed(seed, "splits"));
  deterministic_shuffle(splits, split_rng);
  for (size_t k = 0; k < result.pairs.size(); ++k) result.pairs[k].split = splits[k];
  return result;
}

}  // namespace sandwichr
