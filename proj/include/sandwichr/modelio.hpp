#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sandwichr/format.hpp"
#include "sandwichr/rng.hpp"
#include "sandwichr/unicode.hpp"

namespace sandwichr {

struct GenerationRequest {
  std::string prompt;
  int max_tokens = 256;
  double temperature = 0.0;
  int n = 1;
  std::optional<int64_t> seed;

  void validate() const {
    if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    if (temperature < 0) throw std::invalid_argument("temperature must be >= 0");
  }
};

struct GenerationResult {
  std::vector<std::string> texts;
  std::vector<int> completion_tokens;
  double wall_time_s = 0;
  std::optional<double> time_to_first_answer_s;
};

class BackendError : public std::runtime_error {
 public:
  enum class Code {
    Timeout,
    Network,
    RateLimited,
    ServerError,
    BadRequest,
    ProtocolError,
    MissingRecording,
    Io,
    Config,
  };

  BackendError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Code code() const { return code_; }
  bool retryable() const {
    return code_ == Code::Timeout || code_ == Code::Network || code_ == Code::RateLimited ||
           code_ == Code::ServerError;
  }

 private:
  Code code_;
};

inline std::string_view to_string(BackendError::Code c) {
  using C = BackendError::Code;
  switch (c) {
    case C::Timeout: return "Timeout";
    case C::Network: return "Network";
    case C::RateLimited: return "RateLimited";
    case C::ServerError: return "ServerError";
    case C::BadRequest: return "BadRequest";
    case C::ProtocolError: return "ProtocolError";
    case C::MissingRecording: return "MissingRecording";
    case C::Io: return "Io";
    case C::Config: return "Config";
  }
  return "?";
}

/// Anything that turns a prompt into completions. Implementations must be
/// safe to call from several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual GenerationResult generate(const GenerationRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Request identity and session files

inline nlohmann::json request_params(const GenerationRequest& req) {
  nlohmann::json p;
  p["max_tokens"] = req.max_tokens;
  p["temperature"] = req.temperature;
  p["n"] = req.n;
  p["seed"] = req.seed ? nlohmann::json(*req.seed) : nlohmann::json(nullptr);
  return p;
}

inline std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string request_hash(const GenerationRequest& req) {
  nlohmann::json key = request_params(req);
  key["prompt"] = req.prompt;
  return hex64(fnv1a64(key.dump()));
}

struct SessionEntry {
  std::string request_hash;
  GenerationRequest request;
  GenerationResult result;
};

inline nlohmann::ordered_json to_json(const SessionEntry& e) {
  nlohmann::ordered_json j;
  j["request_hash"] = e.request_hash;
  j["prompt"] = e.request.prompt;
  j["params"] = request_params(e.request);
  j["texts"] = e.result.texts;
  j["usage"] = {{"completion_tokens", e.result.completion_tokens}};
  nlohmann::ordered_json latency;
  latency["wall_time_s"] = e.result.wall_time_s;
  latency["time_to_first_answer_s"] = e.result.time_to_first_answer_s
                                          ? nlohmann::ordered_json(*e.result.time_to_first_answer_s)
                                          : nlohmann::ordered_json(nullptr);
  j["latency"] = latency;
  return j;
}

inline SessionEntry session_entry_from_json(const nlohmann::json& j) {
  SessionEntry e;
  e.request.prompt = j.at("prompt").get<std::string>();
  const auto& p = j.at("params");
  e.request.max_tokens = p.at("max_tokens").get<int>();
  e.request.temperature = p.at("temperature").get<double>();
  e.request.n = p.at("n").get<int>();
  if (p.contains("seed") && !p.at("seed").is_null()) e.request.seed = p.at("seed").get<int64_t>();
  e.request_hash = j.contains("request_hash") ? j.at("request_hash").get<std::string>()
                                              : request_hash(e.request);
  e.result.texts = j.at("texts").get<std::vector<std::string>>();
  if (j.contains("usage") && j.at("usage").contains("completion_tokens"))
    e.result.completion_tokens = j.at("usage").at("completion_tokens").get<std::vector<int>>();
  else
    e.result.completion_tokens.assign(e.result.texts.size(), 0);
  if (j.contains("latency")) {
    const auto& l = j.at("latency");
    e.result.wall_time_s = l.value("wall_time_s", 0.0);
    if (l.contains("time_to_first_answer_s") && !l.at("time_to_first_answer_s").is_null())
      e.result.time_to_first_answer_s = l.at("time_to_first_answer_s").get<double>();
  }
  return e;
}

inline std::vector<SessionEntry> read_session(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw BackendError(BackendError::Code::Io, "cannot open session " + path.string());
  std::vector<SessionEntry> entries;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      entries.push_back(session_entry_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw BackendError(BackendError::Code::Io,
                         path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return entries;
}

/// Digest of a session's recorded content, independent of line order.
inline std::string session_digest(const std::vector<SessionEntry>& entries) {
  std::vector<std::string> lines;
  lines.reserve(entries.size());
  for (const auto& e : entries) lines.push_back(to_json(e).dump());
  std::sort(lines.begin(), lines.end());
  uint64_t h = fnv1a64("");
  for (const auto& l : lines) h = fnv1a64(l + "\n", h);
  return hex64(h);
}

/// Serves completions from a recorded session; unknown requests fail with
/// MissingRecording.
class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(const std::vector<SessionEntry>& entries) {
    for (const auto& e : entries) table_.try_emplace(e.request_hash, e.result);
  }
  explicit ReplayBackend(const std::filesystem::path& session)
      : ReplayBackend(read_session(session)) {}

  GenerationResult generate(const GenerationRequest& req) override {
    const auto it = table_.find(request_hash(req));
    if (it == table_.end())
      throw BackendError(BackendError::Code::MissingRecording,
                         "no recording for request " + request_hash(req));
    return it->second;
  }

  size_t size() const { return table_.size(); }

 private:
  std::unordered_map<std::string, GenerationResult> table_;
};

/// Forwards to another backend and appends every successful exchange to a
/// session file.
class RecordingBackend : public Backend {
 public:
  RecordingBackend(std::shared_ptr<Backend> inner, const std::filesystem::path& session)
      : inner_(std::move(inner)), out_(session, std::ios::binary | std::ios::app) {
    if (!out_)
      throw BackendError(BackendError::Code::Io, "cannot write session " + session.string());
  }

  GenerationResult generate(const GenerationRequest& req) override {
    GenerationResult result = inner_->generate(req);
    const std::string line = to_json(SessionEntry{request_hash(req), req, result}).dump();
    std::lock_guard lock(mu_);
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw BackendError(BackendError::Code::Io, "session write failed");
    return result;
  }

 private:
  std::shared_ptr<Backend> inner_;
  std::mutex mu_;
  std::ofstream out_;
};

/// Runs every request through `backend` and writes the session file.
inline void record_session(Backend& backend, std::span<const GenerationRequest> requests,
                           const std::filesystem::path& session) {
  std::ofstream out(session, std::ios::binary);
  if (!out) throw BackendError(BackendError::Code::Io, "cannot write session " + session.string());
  for (const auto& req : requests) {
    auto result = backend.generate(req);
    out << to_json(SessionEntry{request_hash(req), req, std::move(result)}).dump() << '\n';
  }
  if (!out) throw BackendError(BackendError::Code::Io, "session write failed");
}

// ---------------------------------------------------------------------------
// Mock backend

/// Byte prefix of `s` holding its first `budget` whitespace-delimited pieces,
/// and the number of pieces kept. A cut drops the whitespace after the last
/// kept piece; an uncut text is returned whole.
inline std::pair<std::string, int> truncate_to_tokens(std::string_view s, int budget) {
  int count = 0;
  size_t i = 0, end = 0;
  while (i < s.size()) {
    while (i < s.size() && text::is_ascii_space(s[i])) ++i;
    if (i == s.size()) break;
    if (count == budget) return {std::string(s.substr(0, end)), count};
    while (i < s.size() && !text::is_ascii_space(s[i])) ++i;
    end = i;
    ++count;
  }
  return {std::string(s), count};
}

/// Pieces up to and including the one that completes the first answer span.
inline std::optional<int> tokens_to_first_answer(std::string_view s) {
  int count = 0;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && text::is_ascii_space(s[i])) ++i;
    if (i == s.size()) break;
    while (i < s.size() && !text::is_ascii_space(s[i])) ++i;
    ++count;
    if (first_answer(s.substr(0, i))) return count;
  }
  return std::nullopt;
}

struct MockRule {
  std::string key;  // matched as a substring of the prompt
  std::vector<std::string> completions;
};

struct MockOptions {
  double base_latency_s = 0.0;
  double seconds_per_token = 0.0;
  bool stream = false;
  /// Errors raised by the first calls, in order (fault injection).
  std::vector<BackendError::Code> failures;
};

/// Scripted completions with whitespace-piece token accounting and simulated
/// latency. Sample i of a request with seed s returns completion (s + i) mod k
/// of the matching rule, truncated to max_tokens pieces.
class MockBackend : public Backend {
 public:
  using Options = MockOptions;

  explicit MockBackend(std::vector<MockRule> rules, std::vector<std::string> fallback = {},
                       Options opts = {})
      : rules_(std::move(rules)), fallback_(std::move(fallback)), opts_(std::move(opts)) {
    for (const auto& r : rules_)
      if (r.completions.empty())
        throw BackendError(BackendError::Code::Config, "mock rule '" + r.key + "' has no completions");
  }

  GenerationResult generate(const GenerationRequest& req) override {
    req.validate();
    const size_t call = calls_.fetch_add(1);
    if (call < opts_.failures.size())
      throw BackendError(opts_.failures[call], "injected mock failure");

    const std::vector<std::string>* script = &fallback_;
    size_t best = 0;
    for (const auto& r : rules_) {
      if ((script == &fallback_ || r.key.size() > best) &&
          req.prompt.find(r.key) != std::string::npos) {
        script = &r.completions;
        best = r.key.size();
      }
    }
    if (script->empty())
      throw BackendError(BackendError::Code::BadRequest, "mock has no completion for prompt");

    GenerationResult out;
    const uint64_t offset = static_cast<uint64_t>(req.seed.value_or(0));
    int longest = 0;
    for (int i = 0; i < req.n; ++i) {
      const auto& full = (*script)[(offset + static_cast<uint64_t>(i)) % script->size()];
      auto [txt, count] = truncate_to_tokens(full, req.max_tokens);
      out.texts.push_back(std::move(txt));
      out.completion_tokens.push_back(count);
      longest = std::max(longest, count);
    }
    out.wall_time_s = opts_.base_latency_s + opts_.seconds_per_token * longest;
    if (opts_.stream) {
      if (auto k = tokens_to_first_answer(out.texts.front()))
        out.time_to_first_answer_s = opts_.base_latency_s + opts_.seconds_per_token * *k;
    }
    return out;
  }

  size_t calls() const { return calls_.load(); }

 private:
  std::vector<MockRule> rules_;
  std::vector<std::string> fallback_;
  Options opts_;
  std::atomic<size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Retries

struct RetryPolicy {
  int max_attempts = 5;
  double base_delay_s = 0.5;
  double factor = 2.0;
  double jitter = 0.25;  // +/- fraction of the nominal delay

  /// Nominal delay before retry number `retry` (1-based), without jitter.
  double nominal_delay(int retry) const {
    double d = base_delay_s;
    for (int k = 1; k < retry; ++k) d *= factor;
    return d;
  }
};

/// Re-issues retryable failures of the wrapped backend with jittered
/// exponential backoff; the last error propagates once attempts run out.
class RetryingBackend : public Backend {
 public:
  using Sleeper = std::function<void(double seconds)>;

  RetryingBackend(std::shared_ptr<Backend> inner, RetryPolicy policy = {}, Sleeper sleeper = {})
      : inner_(std::move(inner)), policy_(policy), sleeper_(std::move(sleeper)) {
    if (!sleeper_)
      sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }

  GenerationResult generate(const GenerationRequest& req) override {
    for (int attempt = 1;; ++attempt) {
      try {
        return inner_->generate(req);
      } catch (const BackendError& e) {
        if (!e.retryable() || attempt >= policy_.max_attempts) throw;
        double delay = policy_.nominal_delay(attempt);
        {
          std::lock_guard lock(mu_);
          delay *= 1.0 + policy_.jitter * (2.0 * jitter_rng_.uniform() - 1.0);
        }
        sleeper_(delay);
      }
    }
  }

 private:
  std::shared_ptr<Backend> inner_;
  RetryPolicy policy_;
  Sleeper sleeper_;
  std::mutex mu_;
  Rng jitter_rng_{std::random_device{}()};
};

// ---------------------------------------------------------------------------
// Fan-out

struct Outcome {
  std::optional<GenerationResult> result;
  std::optional<BackendError> error;
};

/// Issues `requests` with up to `parallelism` in flight. Results are indexed
/// like the requests. With `stop_on_fatal`, a non-retryable error stops
/// further requests from being issued; unissued slots stay empty.
inline std::vector<Outcome> generate_all(Backend& backend, std::span<const GenerationRequest> requests,
                                         int parallelism = 1, bool stop_on_fatal = false) {
  std::vector<Outcome> outcomes(requests.size());
  std::atomic<size_t> next{0};
  std::atomic<bool> stop{false};
  auto worker = [&] {
    for (size_t i = next.fetch_add(1); i < requests.size() && !stop; i = next.fetch_add(1)) {
      try {
        outcomes[i].result = backend.generate(requests[i]);
      } catch (const BackendError& e) {
        outcomes[i].error = e;
        if (stop_on_fatal && !e.retryable()) stop = true;
      } catch (const std::exception& e) {
        outcomes[i].error = BackendError(BackendError::Code::ProtocolError, e.what());
        if (stop_on_fatal) stop = true;
      }
    }
  };
  const size_t threads =
      std::min<size_t>(static_cast<size_t>(std::max(1, parallelism)), requests.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return outcomes;
}

}  // namespace sandwichr
