#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sandwichr/corpus.hpp"
#include "sandwichr/format.hpp"
#include "sandwichr/modelio.hpp"
#include "sandwichr/textedit.hpp"

namespace sandwichr {

enum class Budget { Full, Limited };

inline std::string_view to_string(Budget b) { return b == Budget::Full ? "full" : "limited"; }

inline Budget parse_budget(std::string_view s) {
  if (s == "full") return Budget::Full;
  if (s == "limited") return Budget::Limited;
  throw std::invalid_argument("unknown budget: " + std::string(s));
}

struct BudgetSpec {
  int full_tokens = 256;
  int limited_tokens = 20;

  int tokens(Budget b) const { return b == Budget::Full ? full_tokens : limited_tokens; }

  void validate() const {
    if (!(1 <= limited_tokens && limited_tokens < full_tokens))
      throw std::invalid_argument("budget needs 1 <= limited_tokens < full_tokens");
  }
};

struct SampleRecord {
  std::string id;
  ErrorType error_type = ErrorType::WrongWords;
  OutputFormat format = OutputFormat::Sandwich;
  Budget budget = Budget::Full;
  int budget_tokens = 0;
  std::string text;
  std::string hypothesis;
  std::string outcome;  // parse outcome, or "backend_error"
  double f_half = 0;
  double f_half_grapheme = 0;  // same score with grapheme units throughout
  int acc = 0;
  double wall_time_s = 0;
  std::optional<double> time_to_first_answer_s;
  int completion_tokens = 0;
  std::optional<std::string> error;
};

inline nlohmann::ordered_json to_json(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["error_type"] = to_string(r.error_type);
  j["format"] = to_string(r.format);
  j["budget"] = to_string(r.budget);
  j["budget_tokens"] = r.budget_tokens;
  j["text"] = r.text;
  j["hypothesis"] = r.hypothesis;
  j["outcome"] = r.outcome;
  j["f_half"] = r.f_half;
  j["f_half_grapheme"] = r.f_half_grapheme;
  j["acc"] = r.acc;
  j["wall_time_s"] = r.wall_time_s;
  j["time_to_first_answer_s"] = r.time_to_first_answer_s
                                    ? nlohmann::ordered_json(*r.time_to_first_answer_s)
                                    : nlohmann::ordered_json(nullptr);
  j["completion_tokens"] = r.completion_tokens;
  j["error"] = r.error ? nlohmann::ordered_json(*r.error) : nlohmann::ordered_json(nullptr);
  return j;
}

inline SampleRecord sample_record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.id = j.at("id").get<std::string>();
  r.error_type = parse_error_type(j.at("error_type").get<std::string>());
  r.format = parse_output_format(j.at("format").get<std::string>());
  r.budget = parse_budget(j.at("budget").get<std::string>());
  r.budget_tokens = j.value("budget_tokens", 0);
  r.text = j.value("text", "");
  r.hypothesis = j.value("hypothesis", "");
  r.outcome = j.value("outcome", "");
  r.f_half = j.at("f_half").get<double>();
  r.f_half_grapheme = j.value("f_half_grapheme", r.f_half);
  r.acc = j.at("acc").get<int>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
  if (j.contains("time_to_first_answer_s") && !j.at("time_to_first_answer_s").is_null())
    r.time_to_first_answer_s = j.at("time_to_first_answer_s").get<double>();
  r.completion_tokens = j.value("completion_tokens", 0);
  if (j.contains("error") && !j.at("error").is_null()) r.error = j.at("error").get<std::string>();
  return r;
}

inline void write_records_jsonl(const std::filesystem::path& path,
                                const std::vector<SampleRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<SampleRecord> read_records_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<SampleRecord> records;
  std::string line;
  while (std::getline(in, line))
    if (!text::trim(line).empty()) records.push_back(sample_record_from_json(nlohmann::json::parse(line)));
  return records;
}

/// The correction a deployment would act on. Reasoning-first output only
/// yields an answer when it parses strictly; the answer-first formats use
/// the first complete answer. Anything else passes the query through.
inline std::pair<std::string, ParseOutcome> extract_hypothesis(std::string_view completion,
                                                               OutputFormat fmt,
                                                               std::string_view q_noise) {
  const ParseResult p = parse(completion, fmt);
  if (fmt == OutputFormat::ReaAns) {
    if (p.strict()) return {p.answers.front(), p.outcome};
    return {std::string(q_noise), p.outcome};
  }
  if (auto a = p.first_answer()) return {*a, p.outcome};
  return {std::string(q_noise), p.outcome};
}

inline SampleRecord score_sample(const QueryPair& pair, OutputFormat fmt, Budget budget,
                                 int budget_tokens, const GenerationResult& gen) {
  SampleRecord r;
  r.id = pair.id;
  r.error_type = pair.error;
  r.format = fmt;
  r.budget = budget;
  r.budget_tokens = budget_tokens;
  r.text = gen.texts.empty() ? std::string() : gen.texts.front();
  auto [hyp, outcome] = extract_hypothesis(r.text, fmt, pair.q_noise);
  r.hypothesis = std::move(hyp);
  r.outcome = std::string(to_string(outcome));
  r.f_half = f_half_score(r.hypothesis, pair.q_noise, pair.q_clean);
  r.f_half_grapheme = f_half_score(r.hypothesis, pair.q_noise, pair.q_clean, text::UnitMode::Grapheme);
  r.acc = accuracy(r.hypothesis, pair.q_clean);
  r.wall_time_s = gen.wall_time_s;
  r.time_to_first_answer_s = gen.time_to_first_answer_s;
  r.completion_tokens = gen.completion_tokens.empty() ? 0 : gen.completion_tokens.front();
  return r;
}

/// Runs every pair through the backend under one format and token budget.
/// Backend failures are recorded on the sample (scored as pass-through).
inline std::vector<SampleRecord> evaluate(const std::vector<QueryPair>& pairs, Backend& backend,
                                          OutputFormat fmt, Budget budget, int budget_tokens,
                                          int parallelism = 1, const PromptTemplates& templates = {},
                                          double temperature = 0.0) {
  if (pairs.empty()) throw std::invalid_argument("no pairs to evaluate");
  std::vector<GenerationRequest> requests;
  requests.reserve(pairs.size());
  for (const auto& p : pairs) {
    GenerationRequest req;
    req.prompt = render_prompt(p.q_noise, fmt, templates);
    req.max_tokens = budget_tokens;
    req.temperature = temperature;
    requests.push_back(std::move(req));
  }
  const auto outcomes = generate_all(backend, requests, parallelism);
  std::vector<SampleRecord> records;
  records.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (outcomes[i].result) {
      records.push_back(score_sample(pairs[i], fmt, budget, budget_tokens, *outcomes[i].result));
    } else {
      SampleRecord r = score_sample(pairs[i], fmt, budget, budget_tokens, GenerationResult{});
      r.outcome = "backend_error";
      r.error = outcomes[i].error ? outcomes[i].error->what() : "not issued";
      records.push_back(std::move(r));
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Reporting

struct GroupRow {
  OutputFormat format;
  Budget budget;
  size_t n = 0;
  double f_half = 0;
  double f_half_grapheme = 0;
  double acc = 0;
  double wall_time_s = 0;
};

struct DeltaRow {
  OutputFormat format;
  std::optional<double> acc_pct;   // absent when the full-budget value is 0
  std::optional<double> time_pct;
};

struct ErrorTypeRow {
  ErrorType error_type;
  // keyed by (format, budget) in report column order
  std::map<std::pair<OutputFormat, Budget>, std::pair<size_t, double>> acc;
};

struct EvalReport {
  std::vector<GroupRow> rows;
  std::vector<DeltaRow> deltas;
  std::vector<ErrorTypeRow> by_error_type;
  std::vector<std::pair<OutputFormat, Budget>> columns;
  std::vector<std::string> warnings;
};

inline std::optional<double> percent_change(double full, double limited) {
  if (full == 0) return std::nullopt;
  return (limited - full) / full * 100.0;
}

inline EvalReport report(const std::vector<SampleRecord>& records) {
  if (records.empty()) throw std::invalid_argument("no records to report");
  EvalReport rep;
  struct Acc {
    size_t n = 0;
    double f = 0, fg = 0, a = 0, t = 0;
  };
  std::map<std::pair<OutputFormat, Budget>, Acc> groups;
  std::map<ErrorType, std::map<std::pair<OutputFormat, Budget>, Acc>> per_type;
  for (const auto& r : records) {
    auto& g = groups[{r.format, r.budget}];
    ++g.n, g.f += r.f_half, g.fg += r.f_half_grapheme, g.a += r.acc, g.t += r.wall_time_s;
    auto& e = per_type[r.error_type][{r.format, r.budget}];
    ++e.n, e.a += r.acc;
  }
  std::map<OutputFormat, std::map<Budget, const GroupRow*>> by_format;
  for (const auto& [key, g] : groups) {
    const double n = static_cast<double>(g.n);
    rep.rows.push_back({key.first, key.second, g.n, g.f / n, g.fg / n, g.a / n, g.t / n});
    rep.columns.push_back(key);
  }
  for (const auto& row : rep.rows) by_format[row.format][row.budget] = &row;
  bool any_limited = false, any_full = false;
  for (const auto& row : rep.rows) (row.budget == Budget::Full ? any_full : any_limited) = true;
  for (const auto& [fmt, budgets] : by_format) {
    const auto full = budgets.find(Budget::Full);
    const auto limited = budgets.find(Budget::Limited);
    if (full != budgets.end() && limited != budgets.end()) {
      rep.deltas.push_back({fmt, percent_change(full->second->acc, limited->second->acc),
                            percent_change(full->second->wall_time_s, limited->second->wall_time_s)});
    } else if (any_full && any_limited) {
      rep.warnings.push_back("format " + std::string(to_string(fmt)) +
                             " lacks a budget pairing; delta row omitted");
    }
  }
  for (const auto& [type, cols] : per_type) {
    ErrorTypeRow row{type, {}};
    for (const auto& [key, e] : cols) row.acc[key] = {e.n, e.a / static_cast<double>(e.n)};
    rep.by_error_type.push_back(std::move(row));
  }
  return rep;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

inline std::string column_label(const std::pair<OutputFormat, Budget>& c) {
  return std::string(to_string(c.first)) + "/" + std::string(to_string(c.second));
}

}  // namespace detail

inline std::string render_markdown(const EvalReport& rep) {
  std::ostringstream md;
  md << "## Accuracy and latency\n\n";
  md << "| Format | Budget | N | F0.5 | F0.5 (grapheme) | Acc | Time (s) |\n";
  md << "|---|---|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rep.rows)
    md << "| " << to_string(r.format) << " | " << to_string(r.budget) << " | " << r.n << " | "
       << detail::fixed(r.f_half, 3) << " | " << detail::fixed(r.f_half_grapheme, 3) << " | "
       << detail::fixed(r.acc, 3) << " | "
       << detail::fixed(r.wall_time_s, 3) << " |\n";
  if (!rep.deltas.empty()) {
    md << "\n| Format | Δ Acc (%) | Δ Time (%) |\n|---|---:|---:|\n";
    for (const auto& d : rep.deltas)
      md << "| " << to_string(d.format) << " | "
         << (d.acc_pct ? detail::fixed(*d.acc_pct, 2) : "n/a") << " | "
         << (d.time_pct ? detail::fixed(*d.time_pct, 2) : "n/a") << " |\n";
  }
  md << "\n## Accuracy by error type\n\n| Error type |";
  for (const auto& c : rep.columns) md << ' ' << detail::column_label(c) << " |";
  md << "\n|---|";
  for (size_t k = 0; k < rep.columns.size(); ++k) md << "---:|";
  md << '\n';
  for (const auto& row : rep.by_error_type) {
    md << "| " << to_string(row.error_type) << " |";
    for (const auto& c : rep.columns) {
      const auto it = row.acc.find(c);
      md << ' ' << (it == row.acc.end() ? std::string("-") : detail::fixed(it->second.second, 3))
         << " |";
    }
    md << '\n';
  }
  for (const auto& w : rep.warnings) md << "\n> warning: " << w << '\n';
  return md.str();
}

inline std::string render_csv(const EvalReport& rep) {
  std::ostringstream csv;
  csv << "section,format,budget,error_type,n,f_half,f_half_grapheme,acc,wall_time_s,delta_acc_pct,"
         "delta_time_pct\n";
  for (const auto& r : rep.rows)
    csv << "overall," << to_string(r.format) << ',' << to_string(r.budget) << ",," << r.n << ','
        << detail::fixed(r.f_half, 6) << ',' << detail::fixed(r.f_half_grapheme, 6) << ','
        << detail::fixed(r.acc, 6) << ',' << detail::fixed(r.wall_time_s, 6) << ",,\n";
  for (const auto& d : rep.deltas)
    csv << "delta," << to_string(d.format) << ",,,,,,,,"
        << (d.acc_pct ? detail::fixed(*d.acc_pct, 6) : "") << ','
        << (d.time_pct ? detail::fixed(*d.time_pct, 6) : "") << '\n';
  for (const auto& row : rep.by_error_type)
    for (const auto& c : rep.columns) {
      const auto it = row.acc.find(c);
      if (it == row.acc.end()) continue;
      csv << "error_type," << to_string(c.first) << ',' << to_string(c.second) << ','
          << to_string(row.error_type) << ',' << it->second.first << ",,,"
          << detail::fixed(it->second.second, 6) << ",,,\n";
    }
  return csv.str();
}

inline nlohmann::ordered_json render_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rep.rows)
    j["rows"].push_back({{"format", to_string(r.format)}, {"budget", to_string(r.budget)},
                         {"n", r.n}, {"f_half", r.f_half}, {"f_half_grapheme", r.f_half_grapheme},
                         {"acc", r.acc},
                         {"wall_time_s", r.wall_time_s}});
  j["deltas"] = nlohmann::ordered_json::array();
  for (const auto& d : rep.deltas)
    j["deltas"].push_back(
        {{"format", to_string(d.format)},
         {"acc_pct", d.acc_pct ? nlohmann::ordered_json(*d.acc_pct) : nlohmann::ordered_json(nullptr)},
         {"time_pct", d.time_pct ? nlohmann::ordered_json(*d.time_pct) : nlohmann::ordered_json(nullptr)}});
  j["by_error_type"] = nlohmann::ordered_json::array();
  for (const auto& row : rep.by_error_type) {
    nlohmann::ordered_json cols;
    for (const auto& [key, v] : row.acc)
      cols[detail::column_label(key)] = {{"n", v.first}, {"acc", v.second}};
    j["by_error_type"].push_back({{"error_type", to_string(row.error_type)}, {"acc", cols}});
  }
  j["warnings"] = rep.warnings;
  return j;
}

/// Writes report.md, report.csv and report.json into `dir`.
inline void write_report(const EvalReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << body;
  };
  put("report.md", render_markdown(rep));
  put("report.csv", render_csv(rep));
  put("report.json", render_json(rep).dump(2) + "\n");
}

}  // namespace sandwichr
