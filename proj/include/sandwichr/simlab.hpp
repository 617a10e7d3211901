#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sandwichr/corpus.hpp"
#include "sandwichr/format.hpp"
#include "sandwichr/rewards.hpp"
#include "sandwichr/rng.hpp"

namespace sandwichr::simlab {

using Row = std::vector<double>;

/// One input of the toy world with its conditional tables.
///   p_reason[r]       = P(R = r | x)
///   p_final[r][c]     = P(C = c | x, R = r)   (reasoning-conditioned answer)
///   p_init[c]         = P0(C = c | x)         (answer produced before reasoning)
struct ToyInput {
  std::string query;  // x, the noisy query
  std::string gold;   // y*
  Row p_reason;
  std::vector<Row> p_final;
  Row p_init;
};

/// Finite tabular model of the three output paradigms.
struct PolicyModel {
  std::vector<std::string> answers;
  std::vector<std::string> reasons;
  std::vector<ToyInput> inputs;

  std::optional<size_t> answer_index(const std::string& a) const {
    const auto it = std::find(answers.begin(), answers.end(), a);
    if (it == answers.end()) return std::nullopt;
    return static_cast<size_t>(it - answers.begin());
  }

  void validate(double tol = 1e-12) const {
    auto check_row = [&](const Row& row, size_t size, const std::string& what) {
      if (row.size() != size) throw std::invalid_argument(what + ": wrong row size");
      double sum = 0;
      for (double p : row) {
        if (!(p >= 0 && p <= 1)) throw std::invalid_argument(what + ": probability outside [0,1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > tol) throw std::invalid_argument(what + ": row does not sum to 1");
    };
    if (answers.empty() || reasons.empty() || inputs.empty())
      throw std::invalid_argument("model needs answers, reasons and inputs");
    for (const auto& r : reasons)
      if (r.find('<') != std::string::npos) throw std::invalid_argument("reason labels cannot contain '<'");
    for (const auto& a : answers)
      if (a.find('<') != std::string::npos) throw std::invalid_argument("answers cannot contain '<'");
    for (const auto& in : inputs) {
      check_row(in.p_reason, reasons.size(), in.query + " p_reason");
      check_row(in.p_init, answers.size(), in.query + " p_init");
      if (in.p_final.size() != reasons.size())
        throw std::invalid_argument(in.query + " p_final: one row per reason expected");
      for (const auto& row : in.p_final) check_row(row, answers.size(), in.query + " p_final");
    }
  }
};

// ---------------------------------------------------------------------------
// Exact probabilities

/// Reasoning-first correctness: sum over R of P(R|x) P(y*|x,R).
inline double p_rea_ans(const PolicyModel& m, size_t x) {
  const auto& in = m.inputs.at(x);
  const auto gold = m.answer_index(in.gold);
  if (!gold) return 0.0;
  double p = 0;
  for (size_t r = 0; r < m.reasons.size(); ++r) p += in.p_reason[r] * in.p_final[r][*gold];
  return p;
}

/// Initial-answer correctness of the sandwich joint
///   P(C_init, R, C_final | x) = P(R|x) P(C_final|x,R) 1[C_init = C_final],
/// marginalized by enumerating every (R, C_init, C_final).
inline double p_sandwich_init(const PolicyModel& m, size_t x) {
  const auto& in = m.inputs.at(x);
  double p = 0;
  for (size_t r = 0; r < m.reasons.size(); ++r)
    for (size_t ci = 0; ci < m.answers.size(); ++ci) {
      if (m.answers[ci] != in.gold) continue;
      for (size_t cf = 0; cf < m.answers.size(); ++cf)
        if (ci == cf) p += in.p_reason[r] * in.p_final[r][cf];
    }
  return p;
}

/// Answer-first correctness: P0(y*|x); no reasoning table enters.
inline double p_ans_rea_init(const PolicyModel& m, size_t x) {
  const auto& in = m.inputs.at(x);
  const auto gold = m.answer_index(in.gold);
  return gold ? in.p_init[*gold] : 0.0;
}

/// P(C_init = C_final | x) when C_init ~ P0 is drawn before the reasoning.
inline double p_consistent(const PolicyModel& m, size_t x) {
  const auto& in = m.inputs.at(x);
  double p = 0;
  for (size_t c = 0; c < m.answers.size(); ++c) {
    double final_c = 0;
    for (size_t r = 0; r < m.reasons.size(); ++r) final_c += in.p_reason[r] * in.p_final[r][c];
    p += in.p_init[c] * final_c;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Softmax parameterization

inline Row softmax(const Row& logits) {
  Row p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (size_t k = 0; k < logits.size(); ++k) z += (p[k] = std::exp(logits[k] - mx));
  for (double& v : p) v /= z;
  return p;
}

inline Row log_row(const Row& probs) {
  Row out(probs.size());
  for (size_t k = 0; k < probs.size(); ++k) out[k] = std::log(std::max(probs[k], 1e-12));
  return out;
}

struct InputLogits {
  Row init;
  Row reason;
  std::vector<Row> final;
};

struct Trajectory {
  size_t c_init = 0;
  size_t reason = 0;
  size_t c_final = 0;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct TrainOptions {
  double learning_rate = 0.1;
  int group_size = 8;
  double epsilon = 1e-8;
  bool train_init = true;
  bool train_reason = true;
  bool train_final = true;
  double kl_coef = 0.0;  // per-sample log-ratio penalty against the starting policy
};

struct GroupStats {
  double mean_reward = 0;
  double std_reward = 0;
  bool zero_variance = false;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

/// Group-relative advantages (r - mean) / (std + eps) with the population
/// standard deviation. A group whose rewards are all equal gets zeros.
inline GroupStats normalize_group(std::vector<double> rewards, double epsilon) {
  GroupStats s;
  const double n = static_cast<double>(rewards.size());
  s.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0;
  for (double r : rewards) var += (r - s.mean_reward) * (r - s.mean_reward);
  s.std_reward = std::sqrt(var / n);
  s.zero_variance = std::all_of(rewards.begin(), rewards.end(),
                                [&](double r) { return r == rewards.front(); });
  s.advantages.assign(rewards.size(), 0.0);
  if (!s.zero_variance)
    for (size_t i = 0; i < rewards.size(); ++i)
      s.advantages[i] = (rewards[i] - s.mean_reward) / (s.std_reward + epsilon);
  s.rewards = std::move(rewards);
  return s;
}

class SoftmaxPolicy {
 public:
  SoftmaxPolicy(const PolicyModel& model, TrainOptions opts = {})
      : model_(model), opts_(opts) {
    model_.validate(1e-9);
    if (opts_.group_size < 2) throw std::invalid_argument("group size must be >= 2");
    for (const auto& in : model_.inputs) {
      InputLogits l;
      l.init = log_row(in.p_init);
      l.reason = log_row(in.p_reason);
      for (const auto& row : in.p_final) l.final.push_back(log_row(row));
      logits_.push_back(std::move(l));
    }
    reference_ = logits_;
  }

  const PolicyModel& structure() const { return model_; }
  const TrainOptions& options() const { return opts_; }
  std::vector<InputLogits>& logits() { return logits_; }
  const std::vector<InputLogits>& logits() const { return logits_; }

  /// Current tables as a normalized model.
  PolicyModel model() const {
    PolicyModel m = model_;
    for (size_t x = 0; x < m.inputs.size(); ++x) {
      m.inputs[x].p_init = softmax(logits_[x].init);
      m.inputs[x].p_reason = softmax(logits_[x].reason);
      for (size_t r = 0; r < m.reasons.size(); ++r) m.inputs[x].p_final[r] = softmax(logits_[x].final[r]);
    }
    return m;
  }

  static double log_prob(const InputLogits& l, const Trajectory& t) {
    auto log_softmax_at = [](const Row& row, size_t k) { return std::log(softmax(row)[k]); };
    return log_softmax_at(l.init, t.c_init) + log_softmax_at(l.reason, t.reason) +
           log_softmax_at(l.final[t.reason], t.c_final);
  }

  double log_prob(size_t x, const Trajectory& t) const { return log_prob(logits_.at(x), t); }

  /// Gradient of log pi(t) with respect to the logits of input x, shaped
  /// like InputLogits. d log softmax(z)_k / d z_j = 1[j=k] - p_j.
  InputLogits grad_log_prob(size_t x, const Trajectory& t) const {
    const auto& l = logits_.at(x);
    InputLogits g;
    auto row_grad = [](const Row& z, size_t k) {
      Row d = softmax(z);
      for (double& v : d) v = -v;
      d[k] += 1.0;
      return d;
    };
    g.init = row_grad(l.init, t.c_init);
    g.reason = row_grad(l.reason, t.reason);
    g.final.assign(l.final.size(), Row(model_.answers.size(), 0.0));
    g.final[t.reason] = row_grad(l.final[t.reason], t.c_final);
    return g;
  }

  Trajectory sample(size_t x, Rng& rng) const {
    auto draw = [&](const Row& z) {
      const Row p = softmax(z);
      double u = rng.uniform();
      for (size_t k = 0; k + 1 < p.size(); ++k) {
        if (u < p[k]) return k;
        u -= p[k];
      }
      return p.size() - 1;
    };
    const auto& l = logits_.at(x);
    Trajectory t;
    t.c_init = draw(l.init);
    t.reason = draw(l.reason);
    t.c_final = draw(l.final[t.reason]);
    return t;
  }

  /// Renders a trajectory as sandwich text and scores it with the reward suite.
  double reward(size_t x, const Trajectory& t, const RewardWeights& w) const {
    const auto& in = model_.inputs.at(x);
    QueryPair pair;
    pair.q_noise = in.query;
    pair.q_clean = in.gold;
    const std::string completion = serialize(SandwichOutput{
        model_.answers[t.c_init], model_.reasons[t.reason], model_.answers[t.c_final]});
    return total_reward(completion, pair, w).r_total;
  }

  /// One group-relative policy-gradient step on input x.
  GroupStats step(size_t x, const RewardWeights& w, uint64_t seed) {
    Rng rng(seed);
    const size_t g = static_cast<size_t>(opts_.group_size);
    std::vector<Trajectory> group;
    std::vector<double> rewards;
    for (size_t i = 0; i < g; ++i) {
      group.push_back(sample(x, rng));
      double r = reward(x, group.back(), w);
      if (opts_.kl_coef > 0)
        r -= opts_.kl_coef * (log_prob(x, group.back()) - log_prob(reference_.at(x), group.back()));
      rewards.push_back(r);
    }
    GroupStats stats = normalize_group(std::move(rewards), opts_.epsilon);
    if (stats.zero_variance) return stats;

    InputLogits acc;
    acc.init.assign(model_.answers.size(), 0.0);
    acc.reason.assign(model_.reasons.size(), 0.0);
    acc.final.assign(model_.reasons.size(), Row(model_.answers.size(), 0.0));
    for (size_t i = 0; i < g; ++i) {
      const InputLogits d = grad_log_prob(x, group[i]);
      const double a = stats.advantages[i] / static_cast<double>(g);
      for (size_t k = 0; k < acc.init.size(); ++k) acc.init[k] += a * d.init[k];
      for (size_t k = 0; k < acc.reason.size(); ++k) acc.reason[k] += a * d.reason[k];
      for (size_t r = 0; r < acc.final.size(); ++r)
        for (size_t k = 0; k < acc.final[r].size(); ++k) acc.final[r][k] += a * d.final[r][k];
    }
    auto& l = logits_[x];
    const double lr = opts_.learning_rate;
    if (opts_.train_init)
      for (size_t k = 0; k < l.init.size(); ++k) l.init[k] += lr * acc.init[k];
    if (opts_.train_reason)
      for (size_t k = 0; k < l.reason.size(); ++k) l.reason[k] += lr * acc.reason[k];
    if (opts_.train_final)
      for (size_t r = 0; r < l.final.size(); ++r)
        for (size_t k = 0; k < l.final[r].size(); ++k) l.final[r][k] += lr * acc.final[r][k];
    return stats;
  }

 private:
  PolicyModel model_;
  TrainOptions opts_;
  std::vector<InputLogits> logits_;
  std::vector<InputLogits> reference_;
};

/// Convenience wrapper mirroring SoftmaxPolicy::step.
inline GroupStats grpo_step(SoftmaxPolicy& policy, size_t x, const RewardWeights& w, uint64_t seed) {
  return policy.step(x, w, seed);
}

// ---------------------------------------------------------------------------
// Training runs

struct CurvePoint {
  int step = 0;
  double mean_reward = 0;
  double p_init_correct = 0;  // P(C_init = y*) under the trained policy
  double p_consistent = 0;    // P(C_init = C_final)
  double p_rea_ans = 0;       // reasoning-marginalized correctness
  double gap = 0;             // |p_init_correct - p_rea_ans|
};

/// Input-averaged exact quantities of a model.
inline CurvePoint evaluate_model(const PolicyModel& m) {
  CurvePoint c;
  const double n = static_cast<double>(m.inputs.size());
  for (size_t x = 0; x < m.inputs.size(); ++x) {
    const double init = p_ans_rea_init(m, x);
    const double rea = p_rea_ans(m, x);
    c.p_init_correct += init / n;
    c.p_consistent += p_consistent(m, x) / n;
    c.p_rea_ans += rea / n;
    c.gap += std::abs(init - rea) / n;
  }
  return c;
}

struct RunResult {
  uint64_t seed = 0;
  std::vector<CurvePoint> curve;  // step 0 is the starting model
  PolicyModel final_model;
};

/// Trains a fresh policy for `steps` steps, cycling through the inputs.
inline RunResult train(const PolicyModel& start, int steps, const RewardWeights& w, uint64_t seed,
                       const TrainOptions& opts = {}) {
  w.validate();
  SoftmaxPolicy policy(start, opts);
  RunResult run;
  run.seed = seed;
  run.curve.push_back(evaluate_model(policy.model()));
  const size_t inputs = start.inputs.size();
  for (int s = 1; s <= steps; ++s) {
    const size_t x = static_cast<size_t>(s - 1) % inputs;
    const GroupStats stats = policy.step(x, w, derive_seed(seed, "step" + std::to_string(s)));
    CurvePoint p = evaluate_model(policy.model());
    p.step = s;
    p.mean_reward = stats.mean_reward;
    run.curve.push_back(p);
  }
  run.final_model = policy.model();
  return run;
}

struct AblationArm {
  double w_fc = 0;
  std::vector<RunResult> runs;
  double mean_final_p_init_correct = 0;
  double mean_final_p_consistent = 0;
};

struct AblationReport {
  CurvePoint initial;
  AblationArm without_consistency;  // w_fc = 0
  AblationArm with_consistency;     // w_fc = 1
};

inline AblationArm run_arm(const PolicyModel& m, double w_acc, double w_fc, int steps,
                           const std::vector<uint64_t>& seeds, const TrainOptions& opts) {
  AblationArm arm;
  arm.w_fc = w_fc;
  for (uint64_t seed : seeds) {
    arm.runs.push_back(train(m, steps, RewardWeights{w_acc, w_fc}, seed, opts));
    const auto& last = arm.runs.back().curve.back();
    arm.mean_final_p_init_correct += last.p_init_correct / static_cast<double>(seeds.size());
    arm.mean_final_p_consistent += last.p_consistent / static_cast<double>(seeds.size());
  }
  return arm;
}

/// Twin runs with and without the format-and-consistency term on equal seeds.
inline AblationReport ablate_consistency(const PolicyModel& m, int steps,
                                         const std::vector<uint64_t>& seeds,
                                         const TrainOptions& opts = {}, double w_acc = 1.0) {
  AblationReport rep;
  rep.initial = evaluate_model(m);
  rep.without_consistency = run_arm(m, w_acc, 0.0, steps, seeds, opts);
  rep.with_consistency = run_arm(m, w_acc, 1.0, steps, seeds, opts);
  return rep;
}

// ---------------------------------------------------------------------------
// Model files and built-in toy

inline PolicyModel model_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kTop{"answers", "reasons", "inputs"};
  static const std::set<std::string> kInput{"query", "gold", "p_reason", "p_final", "p_init"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!kTop.contains(it.key())) throw std::invalid_argument("unknown model key: " + it.key());
  PolicyModel m;
  m.answers = j.at("answers").get<std::vector<std::string>>();
  m.reasons = j.at("reasons").get<std::vector<std::string>>();
  for (const auto& ji : j.at("inputs")) {
    for (auto it = ji.begin(); it != ji.end(); ++it)
      if (!kInput.contains(it.key())) throw std::invalid_argument("unknown input key: " + it.key());
    ToyInput in;
    in.query = ji.at("query").get<std::string>();
    in.gold = ji.at("gold").get<std::string>();
    in.p_reason = ji.at("p_reason").get<Row>();
    in.p_final = ji.at("p_final").get<std::vector<Row>>();
    in.p_init = ji.at("p_init").get<Row>();
    m.inputs.push_back(std::move(in));
  }
  m.validate(1e-9);
  return m;
}

inline nlohmann::ordered_json to_json(const PolicyModel& m) {
  nlohmann::ordered_json j;
  j["answers"] = m.answers;
  j["reasons"] = m.reasons;
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& in : m.inputs)
    j["inputs"].push_back({{"query", in.query}, {"gold", in.gold}, {"p_reason", in.p_reason},
                           {"p_final", in.p_final}, {"p_init", in.p_init}});
  return j;
}

inline PolicyModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return model_from_json(nlohmann::json::parse(in));
}

/// Two noisy queries whose reasoning tables already favour the gold answer
/// while the answer-first table is uniform.
inline PolicyModel toy_model() {
  PolicyModel m;
  m.answers = {"abcd", "acbd", "abd", "abcc"};
  m.reasons = {"swap back c and b", "keep as is", "drop a unit"};
  m.inputs.push_back({"acbd",
                      "abcd",
                      {0.6, 0.3, 0.1},
                      {{0.9, 0.05, 0.03, 0.02}, {0.2, 0.7, 0.05, 0.05}, {0.3, 0.1, 0.5, 0.1}},
                      {0.25, 0.25, 0.25, 0.25}});
  m.inputs.push_back({"abd",
                      "abcd",
                      {0.5, 0.2, 0.3},
                      {{0.6, 0.1, 0.2, 0.1}, {0.3, 0.1, 0.5, 0.1}, {0.7, 0.1, 0.1, 0.1}},
                      {0.25, 0.25, 0.25, 0.25}});
  m.validate();
  return m;
}

/// Random normalized tables over the given sizes.
inline PolicyModel random_model(Rng& rng, size_t n_answers, size_t n_reasons, size_t n_inputs) {
  auto row = [&](size_t k) {
    Row r(k);
    double z = 0;
    for (double& v : r) z += (v = -std::log(1.0 - rng.uniform()));
    for (double& v : r) v /= z;
    return r;
  };
  PolicyModel m;
  for (size_t a = 0; a < n_answers; ++a) {
    std::string s;
    for (size_t k = 0, v = a; k < 3; ++k, v /= 4) s += static_cast<char>('a' + v % 4);
    m.answers.push_back(s);
  }
  for (size_t r = 0; r < n_reasons; ++r) m.reasons.push_back("reason " + std::to_string(r));
  for (size_t x = 0; x < n_inputs; ++x) {
    ToyInput in;
    in.query = m.answers[rng.below(n_answers)];
    in.gold = m.answers[rng.below(n_answers)];
    in.p_reason = row(n_reasons);
    for (size_t r = 0; r < n_reasons; ++r) in.p_final.push_back(row(n_answers));
    in.p_init = row(n_answers);
    m.inputs.push_back(std::move(in));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Output

inline std::string curves_csv(const std::vector<const AblationArm*>& arms) {
  std::ostringstream csv;
  csv.precision(10);
  csv << "w_fc,seed,step,mean_reward,p_init_correct,p_consistent,p_rea_ans,gap\n";
  for (const auto* arm : arms)
    for (const auto& run : arm->runs)
      for (const auto& p : run.curve)
        csv << arm->w_fc << ',' << run.seed << ',' << p.step << ',' << p.mean_reward << ','
            << p.p_init_correct << ',' << p.p_consistent << ',' << p.p_rea_ans << ',' << p.gap
            << '\n';
  return csv.str();
}

inline std::string summary_markdown(const CurvePoint& initial, const std::vector<const AblationArm*>& arms,
                                    int steps) {
  std::ostringstream md;
  md.setf(std::ios::fixed);
  md.precision(4);
  md << "| w_fc | seeds | steps | P(C_init=y*) start | P(C_init=y*) end | P(C_init=C_final) end |"
        " P_rea-ans end | hard-constrained P(C_init=y*) end |\n";
  md << "|---:|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto* arm : arms) {
    const double k = static_cast<double>(arm->runs.size());
    double rea = 0, hard = 0;
    for (const auto& run : arm->runs) {
      const auto& m = run.final_model;
      for (size_t x = 0; x < m.inputs.size(); ++x) {
        const double share = k * static_cast<double>(m.inputs.size());
        rea += p_rea_ans(m, x) / share;
        hard += p_sandwich_init(m, x) / share;
      }
    }
    md << "| " << arm->w_fc << " | " << arm->runs.size() << " | " << steps << " | "
       << initial.p_init_correct << " | " << arm->mean_final_p_init_correct << " | "
       << arm->mean_final_p_consistent << " | " << rea << " | " << hard << " |\n";
  }
  return md.str();
}

}  // namespace sandwichr::simlab
