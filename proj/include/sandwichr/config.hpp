#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sandwichr/evaluator.hpp"
#include "sandwichr/format.hpp"
#include "sandwichr/http_backend.hpp"
#include "sandwichr/modelio.hpp"
#include "sandwichr/rewards.hpp"
#include "sandwichr/sampler.hpp"

namespace sandwichr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.contains(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline BackendError::Code parse_error_code(const std::string& s) {
  using C = BackendError::Code;
  for (C c : {C::Timeout, C::Network, C::RateLimited, C::ServerError, C::BadRequest,
              C::ProtocolError, C::MissingRecording, C::Io, C::Config})
    if (to_string(c) == s) return c;
  throw ConfigError("unknown backend error code: " + s);
}

}  // namespace detail

struct BackendConfig {
  std::string type = "mock";
  int parallelism = 1;
  std::optional<std::filesystem::path> record_to;
  std::optional<RetryPolicy> retry;
  // mock
  std::vector<MockRule> rules;
  std::vector<std::string> fallback;
  MockBackend::Options mock;
  // replay
  std::filesystem::path session;
  // http
  HttpBackendConfig http;

  /// Relative paths resolve against `base_dir` (the config file's directory).
  static BackendConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    BackendConfig c;
    if (!j.is_object() || !j.contains("type")) throw ConfigError("backend: 'type' is required");
    c.type = j.at("type").get<std::string>();
    std::set<std::string> allowed{"type", "parallelism", "record_to", "retry"};
    if (c.type == "mock") {
      allowed.insert({"rules", "responses", "fallback", "base_latency_s", "seconds_per_token",
                      "stream", "failures"});
    } else if (c.type == "replay") {
      allowed.insert("session");
    } else if (c.type == "http") {
      allowed.insert({"base_url", "path", "model", "api_key_env", "timeout_s", "stream"});
    } else {
      throw ConfigError("backend: unknown type '" + c.type + "'");
    }
    detail::reject_unknown(j, allowed, "backend");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    try {
      c.parallelism = j.value("parallelism", 1);
      if (c.parallelism < 1) throw ConfigError("backend: parallelism must be >= 1");
      if (j.contains("record_to")) c.record_to = resolve(j.at("record_to").get<std::string>());
      if (j.contains("retry")) {
        const auto& r = j.at("retry");
        detail::reject_unknown(r, {"max_attempts", "base_delay_s", "factor", "jitter"}, "backend.retry");
        RetryPolicy p;
        p.max_attempts = r.value("max_attempts", p.max_attempts);
        p.base_delay_s = r.value("base_delay_s", p.base_delay_s);
        p.factor = r.value("factor", p.factor);
        p.jitter = r.value("jitter", p.jitter);
        if (p.max_attempts < 1) throw ConfigError("backend.retry: max_attempts must be >= 1");
        c.retry = p;
      }
      if (c.type == "mock") {
        for (const auto& jr : j.value("rules", nlohmann::json::array())) {
          detail::reject_unknown(jr, {"key", "completions"}, "backend.rules[]");
          c.rules.push_back({jr.at("key").get<std::string>(),
                             jr.at("completions").get<std::vector<std::string>>()});
        }
        if (j.contains("responses")) {
          const auto& resp = j.at("responses");
          if (!resp.is_object()) throw ConfigError("backend.responses: expected an object");
          for (auto it = resp.begin(); it != resp.end(); ++it)
            c.rules.push_back({it.key(), it.value().get<std::vector<std::string>>()});
        }
        c.fallback = j.value("fallback", std::vector<std::string>{});
        c.mock.base_latency_s = j.value("base_latency_s", 0.0);
        c.mock.seconds_per_token = j.value("seconds_per_token", 0.0);
        c.mock.stream = j.value("stream", false);
        for (const auto& f : j.value("failures", std::vector<std::string>{}))
          c.mock.failures.push_back(detail::parse_error_code(f));
      } else if (c.type == "replay") {
        if (!j.contains("session")) throw ConfigError("backend: replay needs 'session'");
        c.session = resolve(j.at("session").get<std::string>());
      } else {
        c.http.base_url = j.value("base_url", c.http.base_url);
        c.http.path = j.value("path", c.http.path);
        c.http.model = j.value("model", c.http.model);
        c.http.api_key_env = j.value("api_key_env", c.http.api_key_env);
        c.http.timeout_s = j.value("timeout_s", c.http.timeout_s);
        c.http.stream = j.value("stream", false);
        if (c.http.timeout_s <= 0) throw ConfigError("backend: timeout_s must be positive");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("backend: ") + e.what());
    }
    return c;
  }

  static BackendConfig load(const std::filesystem::path& path) {
    return from_json(detail::read_json(path), path.parent_path());
  }
};

/// Builds the backend stack: the base backend, an optional retry layer (on by
/// default for http), and an optional session recorder on top.
inline std::shared_ptr<Backend> make_backend(const BackendConfig& c) {
  std::shared_ptr<Backend> b;
  if (c.type == "mock")
    b = std::make_shared<MockBackend>(c.rules, c.fallback, c.mock);
  else if (c.type == "replay")
    b = std::make_shared<ReplayBackend>(c.session);
  else
    b = std::make_shared<HttpBackend>(c.http);
  if (c.retry || c.type == "http") b = std::make_shared<RetryingBackend>(b, c.retry.value_or(RetryPolicy{}));
  if (c.record_to) b = std::make_shared<RecordingBackend>(b, *c.record_to);
  return b;
}

/// Settings shared by the pipeline commands. Command-line flags override
/// whatever a config file sets.
struct RunConfig {
  std::optional<BackendConfig> backend;
  BudgetSpec budget;
  SamplingConfig sampling;
  RewardWeights rewards;
  uint64_t seed = 0;
  std::optional<std::filesystem::path> templates;

  void validate() const {
    budget.validate();
    sampling.validate();
    rewards.validate();
  }

  PromptTemplates prompt_templates() const {
    return templates ? PromptTemplates::load(*templates) : PromptTemplates{};
  }

  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    detail::reject_unknown(j, {"backend", "budget", "sampling", "rewards", "seed", "templates"}, "config");
    RunConfig c;
    try {
      if (j.contains("backend")) {
        const auto& b = j.at("backend");
        if (b.is_string()) {
          std::filesystem::path p(b.get<std::string>());
          c.backend = BackendConfig::load(p.is_relative() && !base_dir.empty() ? base_dir / p : p);
        } else {
          c.backend = BackendConfig::from_json(b, base_dir);
        }
      }
      if (j.contains("budget")) {
        const auto& b = j.at("budget");
        detail::reject_unknown(b, {"full_tokens", "limited_tokens"}, "config.budget");
        c.budget.full_tokens = b.value("full_tokens", c.budget.full_tokens);
        c.budget.limited_tokens = b.value("limited_tokens", c.budget.limited_tokens);
      }
      if (j.contains("sampling")) {
        const auto& s = j.at("sampling");
        detail::reject_unknown(s, {"n", "accept_threshold", "reject_if_all_pass", "temperature",
                                   "max_tokens", "seed"},
                               "config.sampling");
        c.sampling.n = s.value("n", c.sampling.n);
        c.sampling.accept_threshold = s.value("accept_threshold", c.sampling.accept_threshold);
        c.sampling.reject_if_all_pass = s.value("reject_if_all_pass", c.sampling.reject_if_all_pass);
        c.sampling.temperature = s.value("temperature", c.sampling.temperature);
        c.sampling.max_tokens = s.value("max_tokens", c.sampling.max_tokens);
        if (s.contains("seed")) c.sampling.seed = s.at("seed").get<uint64_t>();
      }
      if (j.contains("rewards")) {
        const auto& r = j.at("rewards");
        detail::reject_unknown(r, {"w_acc", "w_fc"}, "config.rewards");
        c.rewards.w_acc = r.value("w_acc", c.rewards.w_acc);
        c.rewards.w_fc = r.value("w_fc", c.rewards.w_fc);
      }
      c.seed = j.value("seed", c.seed);
      if (j.contains("templates")) {
        std::filesystem::path p(j.at("templates").get<std::string>());
        c.templates = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    return from_json(detail::read_json(path), path.parent_path());
  }
};

}  // namespace sandwichr
