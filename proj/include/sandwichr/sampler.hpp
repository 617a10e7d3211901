#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sandwichr/corpus.hpp"
#include "sandwichr/format.hpp"
#include "sandwichr/modelio.hpp"
#include "sandwichr/rewards.hpp"
#include "sandwichr/textedit.hpp"

namespace sandwichr {

struct SamplingConfig {
  int n = 4;
  double accept_threshold = 0.0;  // acceptable iff F0.5 > threshold
  bool reject_if_all_pass = false;
  double temperature = 0.7;
  int max_tokens = 256;
  std::optional<uint64_t> seed;

  void validate() const {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    if (!(accept_threshold >= 0 && accept_threshold < 1))
      throw std::invalid_argument("accept_threshold must lie in [0, 1)");
    if (temperature < 0) throw std::invalid_argument("temperature must be >= 0");
    if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
  }
};

struct Judgement {
  bool acceptable = false;
  double f = 0.0;
};

/// Scores one sampled trajectory by the F0.5 of its initial correction.
inline Judgement judge_trajectory(std::string_view completion, const QueryPair& pair,
                                  double threshold) {
  const auto c_init = initial_correction(parse(completion, OutputFormat::Sandwich));
  if (!c_init) return {};
  const double f = f_half_score(*c_init, pair.q_noise, pair.q_clean);
  return {f > threshold, f};
}

inline bool keep_decision(int acceptable, int n, bool reject_if_all_pass) {
  if (acceptable <= 0) return false;
  return !(reject_if_all_pass && acceptable == n);
}

struct TrajectoryVerdict {
  std::string pair_id;
  std::vector<std::string> texts;
  std::vector<double> f_scores;
  int acceptable_count = 0;
  bool kept = false;
};

inline nlohmann::ordered_json to_json(const TrajectoryVerdict& v) {
  nlohmann::ordered_json j;
  j["pair_id"] = v.pair_id;
  j["texts"] = v.texts;
  j["f_scores"] = v.f_scores;
  j["acceptable_count"] = v.acceptable_count;
  j["kept"] = v.kept;
  return j;
}

inline TrajectoryVerdict judge_samples(const QueryPair& pair, std::vector<std::string> texts,
                                       const SamplingConfig& cfg) {
  TrajectoryVerdict v;
  v.pair_id = pair.id;
  for (const auto& t : texts) {
    const auto j = judge_trajectory(t, pair, cfg.accept_threshold);
    v.f_scores.push_back(j.f);
    v.acceptable_count += j.acceptable ? 1 : 0;
  }
  v.texts = std::move(texts);
  v.kept = keep_decision(v.acceptable_count, static_cast<int>(v.texts.size()), cfg.reject_if_all_pass);
  return v;
}

struct PoolSummary {
  size_t kept = 0;
  size_t rejected_all_fail = 0;
  size_t rejected_all_pass = 0;
  size_t failed = 0;  // pairs with no verdict (backend error or not reached)
};

struct PoolResult {
  std::vector<TrajectoryVerdict> verdicts;  // input order, judged pairs only
  PoolSummary summary;
  std::optional<std::string> error;  // set when a fatal backend error stopped the run
};

inline GenerationRequest sampling_request(const QueryPair& pair, const SamplingConfig& cfg,
                                          const PromptTemplates& templates = {}) {
  GenerationRequest req;
  req.prompt = render_prompt(pair.q_noise, OutputFormat::Sandwich, templates);
  req.max_tokens = cfg.max_tokens;
  req.temperature = cfg.temperature;
  req.n = cfg.n;
  if (cfg.seed) req.seed = static_cast<int64_t>(derive_seed(*cfg.seed, pair.id) >> 33);
  return req;
}

/// Samples N sandwich trajectories per pair and keeps the pairs for which at
/// least one initial correction is acceptable.
inline PoolResult filter_pool(const std::vector<QueryPair>& pairs, Backend& backend,
                              const SamplingConfig& cfg, int parallelism = 1,
                              const PromptTemplates& templates = {}) {
  cfg.validate();
  std::vector<GenerationRequest> requests;
  requests.reserve(pairs.size());
  for (const auto& p : pairs) requests.push_back(sampling_request(p, cfg, templates));

  const auto outcomes = generate_all(backend, requests, parallelism, /*stop_on_fatal=*/true);
  PoolResult result;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto& o = outcomes[i];
    if (!o.result) {
      ++result.summary.failed;
      if (o.error && !result.error) result.error = pairs[i].id + ": " + o.error->what();
      continue;
    }
    auto v = judge_samples(pairs[i], o.result->texts, cfg);
    if (v.kept)
      ++result.summary.kept;
    else if (v.acceptable_count == 0)
      ++result.summary.rejected_all_fail;
    else
      ++result.summary.rejected_all_pass;
    result.verdicts.push_back(std::move(v));
  }
  return result;
}

}  // namespace sandwichr
