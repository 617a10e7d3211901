#include <gtest/gtest.h>

#include <algorithm>

#include "sandwichr/simlab.hpp"

using namespace sandwichr;
using namespace sandwichr::simlab;

TEST(Exact, SandwichInitEqualsReasoningFirstOnRandomModels) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_model(rng, 2 + rng.below(5), 1 + rng.below(4), 3);
    for (size_t x = 0; x < m.inputs.size(); ++x)
      EXPECT_NEAR(p_sandwich_init(m, x), p_rea_ans(m, x), 1e-12);
  }
}

TEST(Exact, AnswerFirstIgnoresReasoningTables) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_model(rng, 4, 3, 2);
    const double before = p_ans_rea_init(m, 0);
    auto& in = m.inputs[0];
    std::reverse(in.p_reason.begin(), in.p_reason.end());
    std::rotate(in.p_final.begin(), in.p_final.begin() + 1, in.p_final.end());
    for (auto& row : in.p_final) std::reverse(row.begin(), row.end());
    EXPECT_DOUBLE_EQ(p_ans_rea_init(m, 0), before);
  }
}

TEST(Exact, ToyModelValues) {
  const auto m = toy_model();
  EXPECT_NEAR(p_rea_ans(m, 0), 0.6 * 0.9 + 0.3 * 0.2 + 0.1 * 0.3, 1e-12);
  EXPECT_NEAR(p_ans_rea_init(m, 0), 0.25, 1e-12);
  EXPECT_NEAR(p_consistent(m, 0), 0.25, 1e-12);
}

TEST(Policy, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  const auto m = random_model(rng, 4, 3, 2);
  SoftmaxPolicy pol(m);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const size_t x = rng.below(2);
    const Trajectory t = pol.sample(x, rng);
    const auto g = pol.grad_log_prob(x, t);
    auto check = [&](Row& z, const Row& grad) {
      for (size_t k = 0; k < z.size(); ++k) {
        const double orig = z[k];
        z[k] = orig + h;
        const double up = pol.log_prob(x, t);
        z[k] = orig - h;
        const double down = pol.log_prob(x, t);
        z[k] = orig;
        const double fd = (up - down) / (2 * h);
        EXPECT_NEAR(grad[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
    };
    auto& l = pol.logits()[x];
    check(l.init, g.init);
    check(l.reason, g.reason);
    for (size_t r = 0; r < l.final.size(); ++r) check(l.final[r], g.final[r]);
  }
}

TEST(Policy, ModelRowsStayNormalized) {
  SoftmaxPolicy pol(toy_model(), TrainOptions{0.5, 8, 1e-8, true, true, true, 0.0});
  for (int s = 0; s < 50; ++s) pol.step(static_cast<size_t>(s % 2), RewardWeights{1, 1}, static_cast<uint64_t>(s));
  EXPECT_NO_THROW(pol.model().validate(1e-9));
}

TEST(Group, ZeroVarianceGivesNoUpdate) {
  const auto s = normalize_group({0.5, 0.5, 0.5, 0.5}, 1e-8);
  EXPECT_TRUE(s.zero_variance);
  for (double a : s.advantages) EXPECT_EQ(a, 0.0);

  // every trajectory earns the same reward when the only answer is gold
  PolicyModel m;
  m.answers = {"abcd"};
  m.reasons = {"r"};
  m.inputs.push_back({"abXd", "abcd", {1.0}, {{1.0}}, {1.0}});
  SoftmaxPolicy pol(m);
  const auto before = pol.logits();
  const auto stats = pol.step(0, RewardWeights{1, 1}, 9);
  EXPECT_TRUE(stats.zero_variance);
  EXPECT_EQ(pol.logits()[0].init, before[0].init);
  EXPECT_EQ(pol.logits()[0].final, before[0].final);
}

TEST(Group, AdvantagesAreScaleAndShiftInvariant) {
  const std::vector<double> r{0.0, 1.0, 2.0, 0.5, 1.5};
  std::vector<double> t;
  for (double v : r) t.push_back(3.0 * v + 7.0);
  const auto a = normalize_group(r, 0.0);
  const auto b = normalize_group(t, 0.0);
  for (size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(a.advantages[i], b.advantages[i], 1e-12);
  double sum = 0;
  for (double v : a.advantages) sum += v;
  EXPECT_NEAR(sum, 0.0, 1e-12);
}

TEST(Train, DeterministicPerSeed) {
  const auto m = toy_model();
  const auto a = train(m, 40, RewardWeights{1, 1}, 5);
  const auto b = train(m, 40, RewardWeights{1, 1}, 5);
  EXPECT_EQ(to_json(a.final_model), to_json(b.final_model));
  EXPECT_EQ(a.curve.size(), 41u);
}

TEST(Train, ConsistencyTermRaisesAgreement) {
  std::vector<uint64_t> seeds;
  for (uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
  const auto rep = ablate_consistency(toy_model(), 300, seeds);
  EXPECT_GT(rep.with_consistency.mean_final_p_consistent, rep.without_consistency.mean_final_p_consistent);
  EXPECT_GT(rep.with_consistency.mean_final_p_consistent, rep.initial.p_consistent);
}

TEST(ModelJson, RoundTripAndValidation) {
  const auto m = toy_model();
  const auto back = model_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(to_json(back), to_json(m));
  auto j = nlohmann::json::parse(to_json(m).dump());
  j["extra"] = 1;
  EXPECT_THROW(model_from_json(j), std::invalid_argument);
  j = nlohmann::json::parse(to_json(m).dump());
  j["inputs"][0]["p_init"] = {0.5, 0.5, 0.5, 0.5};
  EXPECT_THROW(model_from_json(j), std::invalid_argument);
}
