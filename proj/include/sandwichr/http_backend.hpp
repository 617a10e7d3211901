#pragma once

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "sandwichr/format.hpp"
#include "sandwichr/modelio.hpp"

namespace sandwichr {

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "SANDWICHR_API_KEY";
  double timeout_s = 60.0;
  bool stream = false;
};

/// Client for `/v1/chat/completions`-style endpoints. Each call opens its own
/// connection, so one instance can serve many threads.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
  }

  GenerationResult generate(const GenerationRequest& req) override {
    req.validate();
    nlohmann::json body;
    body["model"] = cfg_.model;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}});
    body["max_tokens"] = req.max_tokens;
    body["temperature"] = req.temperature;
    body["n"] = req.n;
    if (req.seed) body["seed"] = *req.seed;
    if (cfg_.stream) body["stream"] = true;

    httplib::Client client(cfg_.base_url);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(cfg_.timeout_s));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Request http_req;
    http_req.method = "POST";
    http_req.path = cfg_.path;
    http_req.body = body.dump();
    http_req.set_header("Content-Type", "application/json");
    if (!api_key_.empty()) http_req.set_header("Authorization", "Bearer " + api_key_);

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    std::string raw;
    StreamState stream(static_cast<size_t>(req.n));
    http_req.content_receiver = [&](const char* data, size_t len, uint64_t, uint64_t) {
      raw.append(data, len);
      if (cfg_.stream) stream.feed(std::string_view(data, len), elapsed());
      return true;
    };

    auto res = client.send(http_req);
    const double wall = elapsed();
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
          err == httplib::Error::Write)
        throw BackendError(BackendError::Code::Timeout, "request timed out: " + httplib::to_string(err));
      throw BackendError(BackendError::Code::Network, "request failed: " + httplib::to_string(err));
    }
    const int status = res->status;
    if (status == 429)
      throw BackendError(BackendError::Code::RateLimited, "HTTP 429: " + raw);
    if (status >= 500)
      throw BackendError(BackendError::Code::ServerError, "HTTP " + std::to_string(status) + ": " + raw);
    if (status >= 400)
      throw BackendError(BackendError::Code::BadRequest, "HTTP " + std::to_string(status) + ": " + raw);
    if (status < 200 || status >= 300)
      throw BackendError(BackendError::Code::ProtocolError, "unexpected HTTP " + std::to_string(status));

    GenerationResult out = cfg_.stream ? stream.finish(req.n) : parse_body(raw, req.n);
    out.wall_time_s = wall;
    return out;
  }

  /// Parses a non-streaming completion body.
  static GenerationResult parse_body(const std::string& raw, int n) {
    GenerationResult out;
    try {
      const auto j = nlohmann::json::parse(raw);
      const auto& choices = j.at("choices");
      if (!choices.is_array() || choices.size() != static_cast<size_t>(n))
        throw std::runtime_error("expected " + std::to_string(n) + " choices");
      out.texts.resize(static_cast<size_t>(n));
      for (size_t k = 0; k < choices.size(); ++k) {
        const auto& c = choices[k];
        const size_t idx = c.value("index", k);
        if (idx >= out.texts.size()) throw std::runtime_error("choice index out of range");
        out.texts[idx] = c.at("message").at("content").get<std::string>();
      }
      int total = 0;
      if (j.contains("usage") && j.at("usage").contains("completion_tokens"))
        total = j.at("usage").at("completion_tokens").get<int>();
      out.completion_tokens = split_usage(total, n);
    } catch (const std::exception& e) {
      throw BackendError(BackendError::Code::ProtocolError, std::string("malformed response: ") + e.what());
    }
    return out;
  }

  /// Providers report usage for the whole request; it is spread evenly over
  /// the choices, remainder to the earliest.
  static std::vector<int> split_usage(int total, int n) {
    std::vector<int> per(static_cast<size_t>(n), total / n);
    for (int k = 0; k < total % n; ++k) ++per[static_cast<size_t>(k)];
    return per;
  }

 private:
  /// Incremental server-sent-events decoder for streamed completions.
  class StreamState {
   public:
    explicit StreamState(size_t n) : texts_(n) {}

    void feed(std::string_view chunk, double now) {
      pending_.append(chunk);
      for (auto nl = pending_.find('\n'); nl != std::string::npos; nl = pending_.find('\n')) {
        std::string line = pending_.substr(0, nl);
        pending_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        handle(line, now);
      }
    }

    GenerationResult finish(int n) {
      if (!pending_.empty()) handle(pending_, 0);
      if (error_) throw BackendError(BackendError::Code::ProtocolError, *error_);
      if (!saw_event_) throw BackendError(BackendError::Code::ProtocolError, "empty event stream");
      GenerationResult out;
      out.texts = texts_;
      out.completion_tokens = split_usage(usage_, n);
      out.time_to_first_answer_s = first_answer_at_;
      return out;
    }

   private:
    void handle(const std::string& line, double now) {
      if (line.rfind("data:", 0) != 0) return;
      std::string_view payload = text::trim(std::string_view(line).substr(5));
      if (payload == "[DONE]") return;
      try {
        const auto j = nlohmann::json::parse(payload);
        saw_event_ = true;
        for (const auto& c : j.value("choices", nlohmann::json::array())) {
          const size_t idx = c.value("index", size_t{0});
          if (idx >= texts_.size()) throw std::runtime_error("choice index out of range");
          if (c.contains("delta") && c.at("delta").contains("content") &&
              c.at("delta").at("content").is_string())
            texts_[idx] += c.at("delta").at("content").get<std::string>();
        }
        if (j.contains("usage") && j.at("usage").is_object())
          usage_ = j.at("usage").value("completion_tokens", usage_);
        if (!first_answer_at_ && !texts_.empty() && first_answer(texts_.front()))
          first_answer_at_ = now;
      } catch (const std::exception& e) {
        if (!error_) error_ = std::string("malformed stream event: ") + e.what();
      }
    }

    std::vector<std::string> texts_;
    std::string pending_;
    int usage_ = 0;
    bool saw_event_ = false;
    std::optional<double> first_answer_at_;
    std::optional<std::string> error_;
  };

  HttpBackendConfig cfg_;
  std::string api_key_;
};

}  // namespace sandwichr
