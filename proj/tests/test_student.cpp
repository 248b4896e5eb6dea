#include <gtest/gtest.h>

#include "cenie/student.hpp"
#include "gradcheck.hpp"

using namespace cenie;
using namespace cenie::student;

using namespace gradcheck;

TEST(Forward, ZeroHeadGivesUniformPolicy) {
  Policy p(Architecture{}, 3);
  Rng rng(1);
  Matrix x = Matrix::NullaryExpr(7, maze::kObsSize, [&] { return uniform01(rng); });
  ForwardPass fp = p.forward(x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    EXPECT_EQ(fp.values(i), 0.0);
    EXPECT_EQ(fp.logits(i, 0), fp.logits(i, 1));
    EXPECT_EQ(fp.logits(i, 1), fp.logits(i, 2));
  }
  EXPECT_EQ(p.params().size(), 104 * 64 + 64 + 64 * 64 + 64 + 4 * 64 + 4);
}

TEST(Forward, DeterministicAndFinite) {
  Rng rng(2);
  Policy p = random_policy(Architecture{}, rng, 0.3);
  Matrix x = Matrix::NullaryExpr(1000, maze::kObsSize, [&] { return uniform01(rng) < 0.3 ? 1.0 : 0.0; });
  ForwardPass a = p.forward(x), b = p.forward(x);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.values, b.values);
  EXPECT_TRUE(a.logits.allFinite());
  EXPECT_TRUE(a.values.allFinite());
}

TEST(Gradient, TenParameterNetwork) {
  Architecture arch{1, {}, 4};
  ASSERT_EQ(arch.parameter_count(), 10u);
  Rng rng(3);
  PpoConfig cfg;
  cfg.entropy_coef = 0.05;
  Policy p = random_policy(arch, rng);
  Batch b = random_batch(p, 16, cfg.clip, rng);
  std::string why;
  EXPECT_TRUE(gradient_matches(p, b, cfg, why)) << why;
}

TEST(Gradient, RandomSmallNetworks) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Architecture arch;
    arch.inputs = 2 + static_cast<int>(uniform_index(rng, 5));
    arch.hidden.assign(1 + uniform_index(rng, 2), 0);
    for (int& h : arch.hidden) h = 2 + static_cast<int>(uniform_index(rng, 5));
    arch.actions = 2 + static_cast<int>(uniform_index(rng, 3));
    PpoConfig cfg;
    cfg.entropy_coef = trial % 2 ? 0.01 : 0.0;
    cfg.value_clipping = trial % 3 != 0;
    Policy p = random_policy(arch, rng);
    Batch b = random_batch(p, 12, cfg.clip, rng);
    std::string why;
    EXPECT_TRUE(gradient_matches(p, b, cfg, why)) << "trial " << trial << " " << why;
  }
}

TEST(Update, ZeroAdvantageFixedPoint) {
  Rng rng(5);
  Policy p = random_policy(Architecture{6, {5}, 3}, rng);
  Batch b = random_batch(p, 20, 0.2, rng);
  ForwardPass fp = p.forward(b.observations);
  Matrix logp = log_softmax(fp.logits);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.old_log_probs(i) = logp(i, b.actions[static_cast<std::size_t>(i)]);
  b.advantages.setZero();
  b.old_values = fp.values;
  b.returns = fp.values;
  const Vector before = p.params();
  AdamState adam;
  PpoConfig cfg;
  ppo_update(p, adam, b, cfg, rng);
  EXPECT_LT((p.params() - before).norm(), 1e-8);
}

TEST(Update, ZeroLearningRateIsBitExact) {
  Rng rng(6);
  Policy p = random_policy(Architecture{6, {5, 4}, 3}, rng);
  Batch b = random_batch(p, 20, 0.2, rng);
  const Vector before = p.params();
  AdamState adam;
  PpoConfig cfg;
  cfg.learning_rate = 0.0;
  ppo_update(p, adam, b, cfg, rng);
  EXPECT_EQ(p.params(), before);
}

TEST(Update, FirstRatiosAreOneAndNormIsClipped) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Policy p = random_policy(Architecture{6, {8}, 3}, rng, 2.0);
    Batch b = random_batch(p, 32, 0.2, rng);
    ForwardPass fp = p.forward(b.observations);
    Matrix logp = log_softmax(fp.logits);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.old_log_probs(i) = logp(i, b.actions[static_cast<std::size_t>(i)]);
    b.old_values = fp.values;
    AdamState adam;
    PpoConfig cfg;
    cfg.max_grad_norm = 0.05;
    cfg.minibatches = 1 + trial % 3;
    UpdateStats s = ppo_update(p, adam, b, cfg, rng);
    if (cfg.minibatches == 1) {
      EXPECT_EQ(s.first_ratio_deviation, 0.0);
    }
    EXPECT_LE(s.max_clipped_norm, cfg.max_grad_norm + 1e-9);
    EXPECT_GT(s.grad_norm, cfg.max_grad_norm);
    EXPECT_EQ(s.gradient_steps, cfg.epochs * cfg.minibatches);
  }
}

TEST(Update, NonFiniteLossAborts) {
  Rng rng(8);
  Policy p = random_policy(Architecture{3, {2}, 2}, rng);
  Batch b = random_batch(p, 4, 0.2, rng);
  b.returns(0) = std::numeric_limits<double>::quiet_NaN();
  AdamState adam;
  EXPECT_THROW(ppo_update(p, adam, b, PpoConfig{}, rng), Error);
}

TEST(Adam, FirstStepIsSignScaled) {
  Vector params = Vector::Zero(3);
  Vector grad(3);
  grad << 2.0, -0.5, 0.0;
  AdamState s;
  adam_step(params, grad, s, 0.1, 1e-8);
  EXPECT_NEAR(params(0), -0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(params(1), 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(params(2), 0.0);
}

TEST(SelectAction, GreedyAndSampledFrequencies) {
  Eigen::RowVectorXd logits(3);
  logits << 0.0, std::log(2.0), std::log(7.0);
  Rng rng(9);
  EXPECT_EQ(select_action(logits, ActionMode::Greedy, rng), 2);
  std::vector<double> freq(3, 0.0);
  for (int i = 0; i < 100000; ++i) freq[static_cast<std::size_t>(select_action(logits, ActionMode::Sample, rng))] += 1e-5;
  EXPECT_NEAR(freq[0], 0.1, 0.01);
  EXPECT_NEAR(freq[1], 0.2, 0.01);
  EXPECT_NEAR(freq[2], 0.7, 0.01);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(10);
  Policy p = random_policy(Architecture{}, rng, 0.2);
  AdamState adam;
  adam.m = Vector::Random(p.params().size());
  adam.v = Vector::Random(p.params().size()).cwiseAbs();
  adam.steps = 42;
  const std::string bytes = encode_checkpoint(p, &adam, {{"ppo_updates", 7}});
  Checkpoint ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.policy.params(), p.params());
  EXPECT_EQ(ck.header.at("ppo_updates"), 7);
  ASSERT_TRUE(ck.adam.has_value());
  EXPECT_EQ(ck.adam->m, adam.m);
  EXPECT_EQ(ck.adam->v, adam.v);
  EXPECT_EQ(ck.adam->steps, 42);
  Matrix x = Matrix::NullaryExpr(5, maze::kObsSize, [&] { return uniform01(rng); });
  EXPECT_EQ(ck.policy.forward(x).logits, p.forward(x).logits);
  EXPECT_EQ(ck.policy.hash(), p.hash());

  Checkpoint plain = decode_checkpoint(encode_checkpoint(p, nullptr, {}));
  EXPECT_FALSE(plain.adam.has_value());
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), Error);
}
