#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sandwichr/config.hpp"

using namespace sandwichr;
namespace fs = std::filesystem;
using nlohmann::json;

TEST(BackendConfig, MockFromJson) {
  const auto c = BackendConfig::from_json(json::parse(R"({
    "type": "mock",
    "rules": [{"key": "red", "completions": ["A"]}],
    "responses": {"blue": ["B", "C"]},
    "fallback": ["F"],
    "base_latency_s": 0.2,
    "failures": ["Timeout"]
  })"));
  ASSERT_EQ(c.rules.size(), 2u);
  EXPECT_EQ(c.rules[1].key, "blue");
  EXPECT_DOUBLE_EQ(c.mock.base_latency_s, 0.2);
  EXPECT_EQ(c.mock.failures, (std::vector<BackendError::Code>{BackendError::Code::Timeout}));
}

TEST(BackendConfig, RejectsUnknownKeysAndTypes) {
  EXPECT_THROW(BackendConfig::from_json(json::parse(R"({"type":"mock","rulez":[]})")), ConfigError);
  EXPECT_THROW(BackendConfig::from_json(json::parse(R"({"type":"grpc"})")), ConfigError);
  EXPECT_THROW(BackendConfig::from_json(json::parse(R"({"parallelism":2})")), ConfigError);
  EXPECT_THROW(BackendConfig::from_json(json::parse(R"({"type":"replay","session":"s","model":"m"})")), ConfigError);
  EXPECT_THROW(BackendConfig::from_json(json::parse(R"({"type":"mock","failures":["Nope"]})")), ConfigError);
  EXPECT_THROW(BackendConfig::from_json(json::parse(R"({"type":"mock","retry":{"tries":3}})")), ConfigError);
  EXPECT_THROW(BackendConfig::from_json(json::parse(R"({"type":"http","timeout_s":0})")), ConfigError);
}

TEST(BackendConfig, RelativePathsResolveAgainstBase) {
  const auto c = BackendConfig::from_json(json::parse(R"({"type":"replay","session":"s.jsonl"})"), "/cfg");
  EXPECT_EQ(c.session, fs::path("/cfg/s.jsonl"));
  const auto a = BackendConfig::from_json(json::parse(R"({"type":"replay","session":"/abs/s.jsonl"})"), "/cfg");
  EXPECT_EQ(a.session, fs::path("/abs/s.jsonl"));
}

TEST(BackendConfig, StackRecordsThroughRetries) {
  const fs::path dir = fs::temp_directory_path() / "sandwichr_config_test";
  fs::create_directories(dir);
  fs::remove(dir / "rec.jsonl");
  auto c = BackendConfig::from_json(json::parse(R"({
    "type": "mock", "fallback": ["x"], "failures": ["ServerError"],
    "retry": {"max_attempts": 3, "base_delay_s": 0.0},
    "record_to": "rec.jsonl"
  })"), dir);
  {
    auto b = make_backend(c);
    GenerationRequest r;
    r.prompt = "p";
    EXPECT_EQ(b->generate(r).texts[0], "x");
  }
  EXPECT_EQ(read_session(dir / "rec.jsonl").size(), 1u);
}

TEST(RunConfig, ParsesSectionsAndValidates) {
  const auto c = RunConfig::from_json(json::parse(R"({
    "backend": {"type": "mock", "fallback": ["x"]},
    "budget": {"full_tokens": 128, "limited_tokens": 16},
    "sampling": {"n": 4, "accept_threshold": 0.5, "seed": 9},
    "rewards": {"w_acc": 1, "w_fc": 0.5},
    "seed": 11,
    "templates": "t.json"
  })"), "/base");
  EXPECT_EQ(c.budget.full_tokens, 128);
  EXPECT_EQ(c.sampling.n, 4);
  EXPECT_EQ(c.sampling.seed, 9u);
  EXPECT_DOUBLE_EQ(c.rewards.w_fc, 0.5);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(*c.templates, fs::path("/base/t.json"));
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"budgets":{}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"budget":{"full_tokens":10,"limited_tokens":10}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"sampling":{"n":0}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"rewards":{"w_acc":0,"w_fc":0}})")), ConfigError);
}

TEST(RunConfig, ShippedExamplesLoad) {
  const fs::path data = SANDWICHR_DATA_DIR;
  EXPECT_NO_THROW(RunConfig::load(data / "run_config.json"));
  EXPECT_NO_THROW(BackendConfig::load(data / "mock_backend.json"));
}
