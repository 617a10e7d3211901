// sandwichr: command-line driver for data generation, SFT preparation,
// rejection sampling, evaluation and the policy simulator.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sandwichr/sandwichr.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace sandwichr;

namespace {

struct Global {
  std::optional<std::string> config_path;
  bool json = false;
};

/// Failure that should end the process with a message and exit code 1.
struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_run_config(const Global& g) {
  return g.config_path ? RunConfig::load(*g.config_path) : RunConfig{};
}

std::vector<double> parse_fractions(const std::string& s, size_t expected, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = std::string(text::trim(item));
    const auto slash = item.find('/');
    try {
      if (slash == std::string::npos) {
        out.push_back(std::stod(item));
      } else {
        const double den = std::stod(item.substr(slash + 1));
        if (den == 0) throw CommandError(what + ": zero denominator");
        out.push_back(std::stod(item.substr(0, slash)) / den);
      }
    } catch (const std::logic_error&) {
      throw CommandError(what + ": cannot parse '" + item + "'");
    }
  }
  if (out.size() != expected)
    throw CommandError(what + ": expected " + std::to_string(expected) + " comma-separated values");
  return out;
}

void emit(const Global& g, const ordered_json& summary, const std::string& human) {
  if (g.json)
    std::cout << summary.dump() << '\n';
  else
    std::cout << human;
}

std::shared_ptr<Backend> backend_from(const std::string& path, const RunConfig& cfg, int& parallelism) {
  BackendConfig bc;
  if (!path.empty())
    bc = BackendConfig::load(path);
  else if (cfg.backend)
    bc = *cfg.backend;
  else
    throw CommandError("no backend configured (use --backend)");
  parallelism = bc.parallelism;
  return make_backend(bc);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string in, out, format, mix = "1/3,1/3,1/3", splits = "0.8,0.1,0.1", confusions;
  uint64_t seed = 0;
  int repeat = 1;
  bool no_fallback = false;
};

int cmd_gen_data(const Global& g, const GenDataArgs& a, const CLI::App& sub) {
  const RunConfig cfg = load_run_config(g);
  const uint64_t seed = sub.count("--seed") ? a.seed : cfg.seed;
  CorpusFormat fmt = CorpusFormat::Tsv;
  const std::string format = a.format.empty() ? fs::path(a.in).extension().string() : "." + a.format;
  if (format == ".jsonl" || format == ".json")
    fmt = CorpusFormat::Jsonl;
  else if (format != ".tsv" && format != ".txt")
    throw CommandError("cannot infer corpus format from '" + a.in + "' (use --format)");

  const IngestResult ingested = ingest_clean(a.in, fmt);
  DatasetOptions opts;
  const auto mix = parse_fractions(a.mix, 3, "--mix");
  const auto splits = parse_fractions(a.splits, 3, "--splits");
  std::copy(mix.begin(), mix.end(), opts.mix.begin());
  std::copy(splits.begin(), splits.end(), opts.splits.begin());
  opts.repeat = a.repeat;
  opts.fallback = !a.no_fallback;
  if (!a.confusions.empty()) opts.confusions = ConfusionTable::load(a.confusions);
  if (a.repeat < 1) throw CommandError("--repeat must be >= 1");

  DatasetResult ds;
  try {
    ds = build_dataset(ingested.queries, seed, opts);
  } catch (const std::invalid_argument& e) {
    throw CommandError(e.what());
  }

  size_t violations = 0;
  for (const auto& p : ds.pairs) {
    if (a.repeat == 1) {
      if (validate_pair(p)) ++violations;
    } else {
      const auto mode = text::unit_mode_for(p.q_clean);
      const auto d = osa_distance(text::segment(p.q_noise, mode).units, text::segment(p.q_clean, mode).units);
      if (p.q_noise == p.q_clean || d != static_cast<size_t>(a.repeat)) ++violations;
    }
  }

  fs::create_directories(a.out);
  std::map<Split, std::vector<QueryPair>> by_split;
  for (const auto& p : ds.pairs) by_split[p.split].push_back(p);
  for (Split s : {Split::Train, Split::Dev, Split::Test})
    write_pairs_jsonl(fs::path(a.out) / (std::string(to_string(s)) + ".jsonl"), by_split[s]);

  std::map<std::string, size_t> per_type;
  for (const auto& p : ds.pairs) ++per_type[std::string(to_string(p.error))];
  ordered_json summary;
  summary["command"] = "gen-data";
  summary["ingested"] = ingested.queries.size();
  summary["rejected_rows"] = ingested.diagnostics.size();
  summary["pairs"] = ds.pairs.size();
  summary["splits"] = {{"train", by_split[Split::Train].size()},
                       {"dev", by_split[Split::Dev].size()},
                       {"test", by_split[Split::Test].size()}};
  summary["error_types"] = per_type;
  summary["skipped"] = ds.skipped;
  summary["invariant_violations"] = violations;

  std::ostringstream human;
  human << "ingested " << ingested.queries.size() << " queries (" << ingested.diagnostics.size()
        << " rows rejected)\n";
  for (const auto& d : ingested.diagnostics) human << "  " << d << '\n';
  human << "pairs: " << ds.pairs.size() << "  train " << by_split[Split::Train].size() << "  dev "
        << by_split[Split::Dev].size() << "  test " << by_split[Split::Test].size() << '\n';
  for (const auto& [t, n] : per_type) human << "  " << t << ": " << n << '\n';
  for (const auto& [why, n] : ds.skipped) human << "skipped (" << why << "): " << n << '\n';
  human << "invariant violations: " << violations << '\n';
  emit(g, summary, human.str());
  return violations == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct SftArgs {
  std::string traces, dataset, backend, out;
};

int cmd_sft_prep(const Global& g, const SftArgs& a) {
  const RunConfig cfg = load_run_config(g);
  const PromptTemplates templates = cfg.prompt_templates();
  std::map<std::string, std::string> noise_by_id;
  std::vector<QueryPair> pairs;
  if (!a.dataset.empty()) {
    pairs = read_pairs_jsonl(a.dataset);
    for (const auto& p : pairs) noise_by_id[p.id] = p.q_noise;
  }

  struct Trace {
    std::string id, q_noise, text;
  };
  std::vector<Trace> traces;
  if (!a.traces.empty()) {
    std::ifstream in(a.traces);
    if (!in) throw CommandError("cannot open " + a.traces);
    std::string line;
    while (std::getline(in, line)) {
      if (text::trim(line).empty()) continue;
      const auto j = nlohmann::json::parse(line);
      Trace t;
      t.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      t.text = j.at("text").get<std::string>();
      t.q_noise = j.value("q_noise", noise_by_id.count(t.id) ? noise_by_id[t.id] : std::string());
      traces.push_back(std::move(t));
    }
  } else {
    if (a.backend.empty() && !cfg.backend) throw CommandError("need --traces or --backend");
    if (pairs.empty()) throw CommandError("generating traces needs --dataset");
    int parallelism = 1;
    auto backend = backend_from(a.backend, cfg, parallelism);
    std::vector<GenerationRequest> reqs;
    for (const auto& p : pairs) {
      GenerationRequest r;
      r.prompt = render_prompt(p.q_noise, OutputFormat::ReaAns, templates);
      r.max_tokens = cfg.budget.full_tokens;
      reqs.push_back(std::move(r));
    }
    const auto outcomes = generate_all(*backend, reqs, parallelism, /*stop_on_fatal=*/true);
    for (size_t i = 0; i < pairs.size(); ++i) {
      if (!outcomes[i].result) {
        throw CommandError("trace generation failed for " + pairs[i].id + ": " +
                           (outcomes[i].error ? outcomes[i].error->what() : "not issued"));
      }
      traces.push_back({pairs[i].id, pairs[i].q_noise, outcomes[i].result->texts.front()});
    }
  }

  std::ofstream out(a.out, std::ios::binary);
  if (!out) throw CommandError("cannot write " + a.out);
  size_t written = 0, bad_parse = 0, no_query = 0, check_failures = 0;
  for (const auto& t : traces) {
    if (t.q_noise.empty()) {
      ++no_query;
      continue;
    }
    const ParseResult p = parse(t.text, OutputFormat::ReaAns);
    if (!p.strict()) {
      ++bad_parse;
      continue;
    }
    const std::string completion = restructure_to_sandwich(p);
    const ParseResult check = parse(completion, OutputFormat::Sandwich);
    if (!check.strict() || check.sandwich().c_init != check.sandwich().c_final) {
      ++check_failures;
      continue;
    }
    ordered_json line;
    line["prompt"] = render_prompt(t.q_noise, OutputFormat::Sandwich, templates);
    line["completion"] = completion;
    out << line.dump() << '\n';
    ++written;
  }
  ordered_json summary{{"command", "sft-prep"}, {"traces", traces.size()}, {"written", written},
                       {"skipped_not_strict", bad_parse}, {"skipped_no_query", no_query},
                       {"check_failures", check_failures}};
  std::ostringstream human;
  human << "traces " << traces.size() << "  written " << written << "  skipped (not strict rea-ans) "
        << bad_parse << "  skipped (no query) " << no_query << '\n';
  emit(g, summary, human.str());
  return check_failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string dataset, backend, out;
  int n = 0, max_tokens = 0;
  double threshold = 0, temperature = 0;
  bool reject_all_pass = false;
  uint64_t seed = 0;
};

int cmd_sample(const Global& g, const SampleArgs& a, const CLI::App& sub) {
  RunConfig cfg = load_run_config(g);
  if (sub.count("--n")) cfg.sampling.n = a.n;
  if (sub.count("--threshold")) cfg.sampling.accept_threshold = a.threshold;
  if (sub.count("--temperature")) cfg.sampling.temperature = a.temperature;
  if (sub.count("--max-tokens")) cfg.sampling.max_tokens = a.max_tokens;
  if (sub.count("--reject-if-all-pass")) cfg.sampling.reject_if_all_pass = a.reject_all_pass;
  if (sub.count("--seed")) cfg.sampling.seed = a.seed;
  try {
    cfg.sampling.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(e.what());
  }

  const auto pairs = read_pairs_jsonl(a.dataset);
  int parallelism = 1;
  auto backend = backend_from(a.backend, cfg, parallelism);
  const PoolResult pool = filter_pool(pairs, *backend, cfg.sampling, parallelism, cfg.prompt_templates());

  fs::create_directories(a.out);
  std::map<std::string, const QueryPair*> by_id;
  for (const auto& p : pairs) by_id[p.id] = &p;
  {
    std::ofstream kept(fs::path(a.out) / "pool.jsonl", std::ios::binary);
    std::ofstream verdicts(fs::path(a.out) / "verdicts.jsonl", std::ios::binary);
    if (!kept || !verdicts) throw CommandError("cannot write into " + a.out);
    for (const auto& v : pool.verdicts) {
      verdicts << to_json(v).dump() << '\n';
      if (v.kept) kept << to_json(*by_id.at(v.pair_id)).dump() << '\n';
    }
  }

  const auto& s = pool.summary;
  ordered_json summary{{"command", "sample"},
                       {"pairs", pairs.size()},
                       {"kept", s.kept},
                       {"rejected_all_fail", s.rejected_all_fail},
                       {"rejected_all_pass", s.rejected_all_pass},
                       {"failed", s.failed},
                       {"error", pool.error ? ordered_json(*pool.error) : ordered_json(nullptr)}};
  std::ostringstream human;
  human << "| outcome | pairs |\n|---|---:|\n"
        << "| kept | " << s.kept << " |\n"
        << "| rejected (no acceptable sample) | " << s.rejected_all_fail << " |\n"
        << "| rejected (all samples acceptable) | " << s.rejected_all_pass << " |\n"
        << "| failed | " << s.failed << " |\n";
  if (pool.error) human << "error: " << *pool.error << '\n';
  emit(g, summary, human.str());
  return pool.error ? 1 : 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string dataset, backend, out, budget = "both";
  std::vector<std::string> formats;
  int full_tokens = 0, limited_tokens = 0, parallelism = 0;
};

int cmd_eval(const Global& g, const EvalArgs& a, const CLI::App& sub) {
  RunConfig cfg = load_run_config(g);
  if (sub.count("--full-tokens")) cfg.budget.full_tokens = a.full_tokens;
  if (sub.count("--limited-tokens")) cfg.budget.limited_tokens = a.limited_tokens;
  try {
    cfg.budget.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(e.what());
  }
  std::vector<OutputFormat> formats;
  for (const auto& f : a.formats) {
    std::stringstream ss(f);
    std::string item;
    while (std::getline(ss, item, ',')) formats.push_back(parse_output_format(item));
  }
  if (formats.empty()) formats.push_back(OutputFormat::Sandwich);
  std::vector<Budget> budgets;
  if (a.budget == "both")
    budgets = {Budget::Full, Budget::Limited};
  else
    budgets = {parse_budget(a.budget)};

  const auto pairs = read_pairs_jsonl(a.dataset);
  if (pairs.empty()) throw CommandError("dataset is empty");
  int parallelism = 1;
  auto backend = backend_from(a.backend, cfg, parallelism);
  if (sub.count("--parallelism")) parallelism = a.parallelism;
  const PromptTemplates templates = cfg.prompt_templates();

  std::vector<SampleRecord> records;
  size_t backend_errors = 0;
  for (OutputFormat f : formats)
    for (Budget b : budgets) {
      auto part = evaluate(pairs, *backend, f, b, cfg.budget.tokens(b), parallelism, templates);
      for (const auto& r : part) backend_errors += r.error ? 1 : 0;
      records.insert(records.end(), part.begin(), part.end());
    }

  fs::create_directories(a.out);
  write_records_jsonl(fs::path(a.out) / "records.jsonl", records);
  const EvalReport rep = report(records);
  write_report(rep, a.out);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';

  ordered_json summary = render_json(rep);
  summary["command"] = "eval";
  summary["records"] = records.size();
  summary["backend_errors"] = backend_errors;
  emit(g, summary, render_markdown(rep));
  return 0;
}

int cmd_report(const Global& g, const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<SampleRecord> records;
  for (const auto& path : inputs) {
    auto part = read_records_jsonl(path);
    records.insert(records.end(), part.begin(), part.end());
  }
  if (records.empty()) throw CommandError("no records");
  const EvalReport rep = report(records);
  write_report(rep, out);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  ordered_json summary = render_json(rep);
  summary["command"] = "report";
  emit(g, summary, render_markdown(rep));
  return 0;
}

// ---------------------------------------------------------------------------

struct SimArgs {
  std::string model, out, wfc = "both";
  int steps = 500, seeds = 10, group_size = 8;
  double lr = 0.1, eps = 1e-8, w_acc = 1.0, kl = 0.0;
  bool freeze_init = false;
};

int cmd_simulate(const Global& g, const SimArgs& a) {
  const simlab::PolicyModel model = a.model.empty() ? simlab::toy_model() : simlab::load_model(a.model);
  simlab::TrainOptions opts;
  opts.learning_rate = a.lr;
  opts.group_size = a.group_size;
  opts.epsilon = a.eps;
  opts.train_init = !a.freeze_init;
  opts.kl_coef = a.kl;
  if (a.steps < 0 || a.seeds < 1) throw CommandError("--steps must be >= 0 and --seeds >= 1");
  std::vector<uint64_t> seeds;
  for (int s = 0; s < a.seeds; ++s) seeds.push_back(static_cast<uint64_t>(s));

  std::vector<double> wfcs;
  if (a.wfc == "both")
    wfcs = {0.0, 1.0};
  else if (a.wfc == "0" || a.wfc == "1")
    wfcs = {a.wfc == "1" ? 1.0 : 0.0};
  else
    throw CommandError("--wfc must be 0, 1 or both");

  std::vector<simlab::AblationArm> arms;
  for (double w : wfcs) {
    if (a.w_acc == 0 && w == 0) throw CommandError("w_acc and w_fc cannot both be zero");
    arms.push_back(simlab::run_arm(model, a.w_acc, w, a.steps, seeds, opts));
  }
  std::vector<const simlab::AblationArm*> views;
  for (const auto& arm : arms) views.push_back(&arm);
  const auto initial = simlab::evaluate_model(model);

  fs::create_directories(a.out);
  {
    std::ofstream csv(fs::path(a.out) / "curves.csv", std::ios::binary);
    std::ofstream md(fs::path(a.out) / "summary.md", std::ios::binary);
    if (!csv || !md) throw CommandError("cannot write into " + a.out);
    csv << simlab::curves_csv(views);
    md << simlab::summary_markdown(initial, views, a.steps);
  }

  ordered_json summary;
  summary["command"] = "simulate";
  summary["initial_p_init_correct"] = initial.p_init_correct;
  summary["initial_p_consistent"] = initial.p_consistent;
  summary["arms"] = ordered_json::array();
  for (const auto& arm : arms)
    summary["arms"].push_back({{"w_fc", arm.w_fc},
                               {"seeds", arm.runs.size()},
                               {"mean_final_p_init_correct", arm.mean_final_p_init_correct},
                               {"mean_final_p_consistent", arm.mean_final_p_consistent}});
  emit(g, summary, simlab::summary_markdown(initial, views, a.steps));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-correction pipeline tools: data generation, SFT prep, sampling, evaluation, simulation"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_flag("--json", g.json, "Print a machine-readable summary");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Build noisy/clean query pairs from a clean corpus");
  gen_cmd->add_option("--in", gen.in, "Clean corpus (TSV id<TAB>query or JSONL {id, query})")
      ->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--format", gen.format, "Corpus format")->check(CLI::IsMember({"tsv", "jsonl"}));
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--mix", gen.mix, "Wrong,Missing,Disorder proportions (fractions allowed)");
  gen_cmd->add_option("--splits", gen.splits, "train,dev,test proportions");
  gen_cmd->add_option("--repeat", gen.repeat, "Errors composed per query");
  gen_cmd->add_option("--confusions", gen.confusions, "Confusion table JSON")->check(CLI::ExistingFile);
  gen_cmd->add_flag("--no-fallback", gen.no_fallback, "Disable random substitution for units without confusions");

  SftArgs sft;
  auto* sft_cmd = app.add_subcommand("sft-prep", "Restructure reasoning-first traces into sandwich SFT data");
  sft_cmd->add_option("--traces", sft.traces, "JSONL of {id, text[, q_noise]}")->check(CLI::ExistingFile);
  sft_cmd->add_option("--dataset", sft.dataset, "Pairs JSONL supplying q_noise by id")->check(CLI::ExistingFile);
  sft_cmd->add_option("--backend", sft.backend, "Backend config used to generate traces")->check(CLI::ExistingFile);
  sft_cmd->add_option("--out", sft.out, "Output JSONL of {prompt, completion}")->required();

  SampleArgs smp;
  auto* smp_cmd = app.add_subcommand("sample", "Margin-based rejection sampling of training pairs");
  smp_cmd->add_option("--dataset", smp.dataset, "Pairs JSONL")->required()->check(CLI::ExistingFile);
  smp_cmd->add_option("--backend", smp.backend, "Backend config")->check(CLI::ExistingFile);
  smp_cmd->add_option("--out", smp.out, "Output directory")->required();
  smp_cmd->add_option("--n", smp.n, "Samples per pair");
  smp_cmd->add_option("--threshold", smp.threshold, "Acceptable iff F0.5 exceeds this");
  smp_cmd->add_option("--temperature", smp.temperature, "Sampling temperature");
  smp_cmd->add_option("--max-tokens", smp.max_tokens, "Completion budget");
  smp_cmd->add_option("--seed", smp.seed, "Base seed for per-pair request seeds");
  smp_cmd->add_flag("--reject-if-all-pass", smp.reject_all_pass, "Also drop pairs whose samples all pass");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a backend under full and limited token budgets");
  ev_cmd->add_option("--dataset", ev.dataset, "Pairs JSONL")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--format", ev.formats, "rea-ans|ans-rea|sandwich (repeatable or comma list)");
  ev_cmd->add_option("--budget", ev.budget, "full|limited|both")->check(CLI::IsMember({"full", "limited", "both"}));
  ev_cmd->add_option("--backend", ev.backend, "Backend config")->check(CLI::ExistingFile);
  ev_cmd->add_option("--out", ev.out, "Output directory")->required();
  ev_cmd->add_option("--full-tokens", ev.full_tokens, "Full budget in tokens");
  ev_cmd->add_option("--limited-tokens", ev.limited_tokens, "Limited budget in tokens");
  ev_cmd->add_option("--parallelism", ev.parallelism, "Requests in flight");

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* rep_cmd = app.add_subcommand("report", "Re-render evaluation tables from records");
  rep_cmd->add_option("--records", report_inputs, "records.jsonl files")->required()->check(CLI::ExistingFile);
  rep_cmd->add_option("--out", report_out, "Output directory")->required();

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Train tabular sandwich policies with and without the consistency term");
  sim_cmd->add_option("--model", sim.model, "Model JSON (default: built-in toy)")->check(CLI::ExistingFile);
  sim_cmd->add_option("--steps", sim.steps, "Policy-gradient steps per run");
  sim_cmd->add_option("--seeds", sim.seeds, "Number of seeds");
  sim_cmd->add_option("--wfc", sim.wfc, "Weight of the format-and-consistency term: 0, 1 or both");
  sim_cmd->add_option("--w-acc", sim.w_acc, "Weight of the accuracy term");
  sim_cmd->add_option("--lr", sim.lr, "Learning rate");
  sim_cmd->add_option("--group-size", sim.group_size, "Samples per group");
  sim_cmd->add_option("--eps", sim.eps, "Advantage epsilon");
  sim_cmd->add_option("--kl", sim.kl, "Log-ratio penalty against the starting policy");
  sim_cmd->add_flag("--freeze-init", sim.freeze_init, "Do not train the answer-first table");
  sim_cmd->add_option("--out", sim.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return cmd_gen_data(g, gen, *gen_cmd);
    if (*sft_cmd) return cmd_sft_prep(g, sft);
    if (*smp_cmd) return cmd_sample(g, smp, *smp_cmd);
    if (*ev_cmd) return cmd_eval(g, ev, *ev_cmd);
    if (*rep_cmd) return cmd_report(g, report_inputs, report_out);
    if (*sim_cmd) return cmd_simulate(g, sim);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
