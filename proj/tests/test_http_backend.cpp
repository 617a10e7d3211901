#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "sandwichr/http_backend.hpp"

using namespace sandwichr;

namespace {

std::string completion_body(const std::vector<std::string>& texts, int tokens) {
  nlohmann::json j;
  j["choices"] = nlohmann::json::array();
  for (size_t i = 0; i < texts.size(); ++i)
    j["choices"].push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", texts[i]}}}});
  j["usage"] = {{"completion_tokens", tokens}};
  return j.dump();
}

class LocalServer : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/ok", [this](const httplib::Request& req, httplib::Response& res) {
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      const auto j = nlohmann::json::parse(req.body);
      std::vector<std::string> texts;
      for (int i = 0; i < j.at("n").get<int>(); ++i) texts.push_back("reply " + std::to_string(i));
      res.set_content(completion_body(texts, 7), "application/json");
    });
    server_.Post("/flaky", [this](const httplib::Request&, httplib::Response& res) {
      if (flaky_calls_++ < 2) {
        res.status = 500;
        res.set_content("overloaded", "text/plain");
        return;
      }
      res.set_content(completion_body({"recovered"}, 1), "application/json");
    });
    server_.Post("/bad", [](const httplib::Request&, httplib::Response& res) {
      res.status = 400;
      res.set_content("{\"error\":\"bad prompt\"}", "application/json");
    });
    server_.Post("/rate", [](const httplib::Request&, httplib::Response& res) {
      res.status = 429;
      res.set_content("slow down", "text/plain");
    });
    server_.Post("/malformed", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("{\"choices\": 3", "application/json");
    });
    server_.Post("/slow", [](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1500));
      res.set_content(completion_body({"late"}, 1), "application/json");
    });
    server_.Post("/stream", [](const httplib::Request&, httplib::Response& res) {
      res.set_chunked_content_provider("text/event-stream", [](size_t, httplib::DataSink& sink) {
        const std::vector<std::string> deltas{"<answer>red", " shoes</answer>", "\n<reasoning>typo</reasoning>",
                                              "\n<answer>red shoes</answer>"};
        for (const auto& d : deltas) {
          nlohmann::json ev{{"choices", {{{"index", 0}, {"delta", {{"content", d}}}}}}};
          const std::string line = "data: " + ev.dump() + "\n\n";
          sink.write(line.data(), line.size());
          std::this_thread::sleep_for(std::chrono::milliseconds(30));
        }
        const std::string usage = "data: {\"choices\":[],\"usage\":{\"completion_tokens\":9}}\n\ndata: [DONE]\n\n";
        sink.write(usage.data(), usage.size());
        sink.done();
        return true;
      });
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  HttpBackendConfig config(const std::string& path, double timeout = 5.0, bool stream = false) {
    HttpBackendConfig c;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_);
    c.path = path;
    c.model = "test-model";
    c.timeout_s = timeout;
    c.stream = stream;
    c.api_key_env = "SANDWICHR_TEST_KEY";
    return c;
  }

  static GenerationRequest request(int n = 1) {
    GenerationRequest r;
    r.prompt = "fix: red shose";
    r.max_tokens = 32;
    r.n = n;
    r.seed = 5;
    return r;
  }

  static BackendError::Code code_of(HttpBackend& b) {
    try {
      b.generate(request());
    } catch (const BackendError& e) {
      return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return BackendError::Code::Config;
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> flaky_calls_{0};
  std::string last_body_, last_auth_;
};

}  // namespace

TEST_F(LocalServer, SuccessfulCompletion) {
  setenv("SANDWICHR_TEST_KEY", "secret", 1);
  HttpBackend b(config("/ok"));
  const auto out = b.generate(request(3));
  EXPECT_EQ(out.texts, (std::vector<std::string>{"reply 0", "reply 1", "reply 2"}));
  EXPECT_EQ(out.completion_tokens, (std::vector<int>{3, 2, 2}));
  EXPECT_GT(out.wall_time_s, 0.0);
  const auto body = nlohmann::json::parse(last_body_);
  EXPECT_EQ(body.at("model"), "test-model");
  EXPECT_EQ(body.at("max_tokens"), 32);
  EXPECT_EQ(body.at("seed"), 5);
  EXPECT_EQ(body.at("messages")[0].at("content"), "fix: red shose");
  EXPECT_EQ(last_auth_, "Bearer secret");
  unsetenv("SANDWICHR_TEST_KEY");
}

TEST_F(LocalServer, ServerErrorsAreRetried) {
  auto inner = std::make_shared<HttpBackend>(config("/flaky"));
  RetryingBackend b(inner, RetryPolicy{4, 0.001, 2.0, 0.0});
  EXPECT_EQ(b.generate(request()).texts[0], "recovered");
  EXPECT_EQ(flaky_calls_.load(), 3);
}

TEST_F(LocalServer, StatusMapping) {
  HttpBackend bad(config("/bad"));
  EXPECT_EQ(code_of(bad), BackendError::Code::BadRequest);
  HttpBackend rate(config("/rate"));
  EXPECT_EQ(code_of(rate), BackendError::Code::RateLimited);
  HttpBackend malformed(config("/malformed"));
  EXPECT_EQ(code_of(malformed), BackendError::Code::ProtocolError);
  HttpBackend missing(config("/nowhere"));
  EXPECT_EQ(code_of(missing), BackendError::Code::BadRequest);
}

TEST_F(LocalServer, BadRequestIsNotRetried) {
  std::atomic<int> sleeps{0};
  auto inner = std::make_shared<HttpBackend>(config("/bad"));
  RetryingBackend b(inner, RetryPolicy{}, [&](double) { ++sleeps; });
  EXPECT_THROW(b.generate(request()), BackendError);
  EXPECT_EQ(sleeps.load(), 0);
}

TEST_F(LocalServer, Timeout) {
  HttpBackend slow(config("/slow", 0.3));
  EXPECT_EQ(code_of(slow), BackendError::Code::Timeout);
}

TEST_F(LocalServer, ConnectionRefusedIsNetworkError) {
  auto c = config("/ok");
  c.base_url = "http://127.0.0.1:1";
  HttpBackend b(c);
  EXPECT_EQ(code_of(b), BackendError::Code::Network);
}

TEST_F(LocalServer, StreamingRecordsTimeToFirstAnswer) {
  HttpBackend b(config("/stream", 5.0, true));
  const auto out = b.generate(request());
  EXPECT_EQ(out.texts[0], "<answer>red shoes</answer>\n<reasoning>typo</reasoning>\n<answer>red shoes</answer>");
  EXPECT_EQ(out.completion_tokens, (std::vector<int>{9}));
  ASSERT_TRUE(out.time_to_first_answer_s);
  EXPECT_LT(*out.time_to_first_answer_s, out.wall_time_s);
}

TEST(HttpParse, ChoiceCountMustMatch) {
  EXPECT_THROW(HttpBackend::parse_body(completion_body({"a"}, 1), 2), BackendError);
  const auto out = HttpBackend::parse_body(completion_body({"a", "b"}, 5), 2);
  EXPECT_EQ(out.texts, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(HttpBackend::split_usage(5, 2), (std::vector<int>{3, 2}));
}
