#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "cenie/level_buffer.hpp"

using namespace cenie;
using namespace cenie::buffer;

namespace {

using Entry = BufferEntry<int>;

Entry entry(int id, double regret, double novelty, std::uint64_t last = 0, std::uint64_t inserted = 0) {
  return Entry{id, regret, novelty, last, inserted};
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

BufferConfig cfg(double alpha, double rho, double beta = 1.0, std::size_t capacity = 16) {
  BufferConfig c;
  c.alpha = alpha;
  c.rho = rho;
  c.beta = beta;
  c.capacity = capacity;
  return c;
}

}  // namespace

TEST(RankProbs, EqualScoresAreUniform) {
  std::vector<double> s(5, 2.5);
  for (double p : rank_prioritized_probs(s, 0.3)) EXPECT_NEAR(p, 0.2, 1e-15);
}

TEST(RankProbs, HandComputedCase) {
  std::vector<double> s{3, 1, 2};
  auto p = rank_prioritized_probs(s, 1.0);
  EXPECT_NEAR(p[0], 6.0 / 11.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 11.0, 1e-15);
  EXPECT_NEAR(p[2], 3.0 / 11.0, 1e-15);
}

TEST(RankProbs, TinyTemperatureIsNearUniform) {
  std::vector<double> s{9, 1, 4, -3};
  for (double p : rank_prioritized_probs(s, 1e-9)) EXPECT_NEAR(p, 0.25, 1e-6);
}

TEST(RankProbs, TiesShareSmallestRank) {
  std::vector<double> s{5, 5, 3};
  auto p = rank_prioritized_probs(s, 1.0);
  // ranks (1, 1, 3): weights 1, 1, 1/3
  EXPECT_NEAR(p[0], 3.0 / 7.0, 1e-15);
  EXPECT_EQ(p[0], p[1]);
  EXPECT_NEAR(p[2], 1.0 / 7.0, 1e-15);
}

TEST(RankProbs, NaNThrows) {
  std::vector<double> s{1.0, std::nan("")};
  EXPECT_THROW(rank_prioritized_probs(s, 1.0), Error);
}

TEST(RankProbs, InvariantUnderMonotoneTransformAndSumsToOne) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(1 + rng() % 40);
    for (auto& x : s) x = std::round(z(rng) * 3.0) / 3.0;  // induce ties
    std::vector<double> t = s;
    for (auto& x : t) x = std::exp(x) * 5.0 - 2.0;
    auto p = rank_prioritized_probs(s, 0.3);
    auto q = rank_prioritized_probs(t, 0.3);
    EXPECT_NEAR(sum(p), 1.0, 1e-12);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GE(p[i], 0.0);
      EXPECT_EQ(p[i], q[i]);
    }
  }
}

TEST(CombinedProbs, IdentityReductions) {
  std::vector<Entry> e{entry(0, 1.0, 5.0, 0), entry(1, 3.0, 2.0, 4), entry(2, 2.0, 9.0, 7)};
  std::vector<double> nov{5.0, 2.0, 9.0}, reg{1.0, 3.0, 2.0};
  auto pn = rank_prioritized_probs(nov, 0.3);
  auto pr = rank_prioritized_probs(reg, 0.3);
  auto novelty_only = combined_replay_probs<int>(e, cfg(1.0, 0.0, 0.3), 10);
  auto regret_only = combined_replay_probs<int>(e, cfg(0.0, 0.0, 0.3), 10);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(novelty_only[i], pn[i]);
    EXPECT_EQ(regret_only[i], pr[i]);
  }
}

TEST(CombinedProbs, ArithmeticMean) {
  std::vector<double> pn{0.6, 0.4}, pr{0.2, 0.8}, pc{0.5, 0.5};
  auto p = mix_channels(pn, pr, pc, 0.5, 0.0);
  EXPECT_NEAR(p[0], 0.4, 1e-15);
  EXPECT_NEAR(p[1], 0.6, 1e-15);
}

TEST(CombinedProbs, StalenessChannel) {
  std::vector<Entry> e{entry(0, 1.0, 1.0, 10), entry(1, 1.0, 1.0, 6), entry(2, 1.0, 1.0, 2)};
  auto p = combined_replay_probs<int>(e, cfg(0.5, 1.0), 10);
  EXPECT_NEAR(p[0], 0.0, 1e-15);
  EXPECT_NEAR(p[1], 4.0 / 12.0, 1e-15);
  EXPECT_NEAR(p[2], 8.0 / 12.0, 1e-15);
  auto fresh = combined_replay_probs<int>(e, cfg(0.5, 1.0), 2);  // all staleness clamp to 0 -> uniform
  for (double x : fresh) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
  auto mixed = combined_replay_probs<int>(e, cfg(0.5, 0.5), 10);
  EXPECT_NEAR(sum(mixed), 1.0, 1e-12);
  EXPECT_NEAR(mixed[2], 0.5 / 3.0 + 0.5 * 8.0 / 12.0, 1e-15);
}

TEST(InsertIfBetter, EmptyBufferAlwaysInserts) {
  LevelBuffer<int> b(cfg(0.5, 0.5, 0.3, 3));
  auto r = b.insert_if_better(entry(1, -100.0, -100.0), 4);
  EXPECT_TRUE(r.inserted);
  EXPECT_EQ(b.size(), 1u);
  EXPECT_EQ(b.at(0).inserted_episode, 4u);
}

TEST(InsertIfBetter, RejectsStrictlySmaller) {
  // Scores give probabilities (6/11, 3/11) for the buffer and 2/11 for the candidate.
  LevelBuffer<int> b(cfg(0.5, 0.0, 1.0, 2));
  b.insert_if_better(entry(1, 3.0, 3.0), 0);
  b.insert_if_better(entry(2, 2.0, 2.0), 0);
  auto r = b.insert_if_better(entry(3, 1.0, 1.0), 1);
  EXPECT_FALSE(r.inserted);
  EXPECT_NEAR(r.candidate_probability, 2.0 / 11.0, 1e-15);
  EXPECT_EQ(b.at(0).level, 1);
  EXPECT_EQ(b.at(1).level, 2);
}

TEST(InsertIfBetter, EvictsArgminForBestCandidate) {
  // Hand computation, alpha=0.5, rho=0, beta=1 over {A(r=2,n=1), B(r=1,n=2), C(r=5,n=5)}:
  // regret ranks (2,3,1) -> (3/11, 2/11, 6/11); novelty ranks (3,2,1) -> (2/11, 3/11, 6/11)
  // mixed -> A 5/22, B 5/22, C 12/22. Tie between A and B: A is older and is evicted.
  LevelBuffer<int> b(cfg(0.5, 0.0, 1.0, 2));
  b.insert_if_better(entry(10, 2.0, 1.0), 0);
  b.insert_if_better(entry(11, 1.0, 2.0), 1);
  auto r = b.insert_if_better(entry(12, 5.0, 5.0), 2);
  ASSERT_TRUE(r.inserted);
  ASSERT_TRUE(r.evicted.has_value());
  EXPECT_EQ(r.evicted->level, 10);
  EXPECT_NEAR(r.candidate_probability, 12.0 / 22.0, 1e-15);
  EXPECT_EQ(b.size(), 2u);
  EXPECT_EQ(b.at(0).level, 11);
  EXPECT_EQ(b.at(1).level, 12);
}

TEST(InsertIfBetter, NeverExceedsCapacity) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u;
  LevelBuffer<int> b(cfg(0.5, 0.5, 0.3, 7));
  for (int i = 0; i < 200; ++i) {
    b.insert_if_better(entry(i, u(rng), u(rng)), static_cast<std::uint64_t>(i));
    ASSERT_LE(b.size(), 7u);
    if (i % 3 == 0) b.sample_replay(static_cast<std::uint64_t>(i), rng);
    EXPECT_NEAR(sum(b.replay_probs(static_cast<std::uint64_t>(i))), 1.0, 1e-12);
  }
}

TEST(SampleReplay, SingleEntry) {
  LevelBuffer<int> b(cfg(0.5, 0.5));
  b.insert_if_better(entry(4, 1.0, 1.0), 0);
  Rng rng(1);
  EXPECT_EQ(b.sample_replay(5, rng), 0u);
  EXPECT_EQ(b.at(0).last_replay_episode, 5u);
  EXPECT_EQ(b.replay_probs(5)[0], 1.0);
}

TEST(SampleReplay, EmptyThrows) {
  LevelBuffer<int> b(cfg(0.5, 0.5));
  Rng rng(1);
  EXPECT_THROW(b.sample_replay(0, rng), Error);
}

TEST(SampleReplay, NearDegenerateDistribution) {
  // Regret-only, beta large: P = (1 - eps, eps) with eps ~ 1e-9.
  const double beta = std::log2(1e9);
  LevelBuffer<int> b(cfg(0.0, 0.0, beta));
  b.insert_if_better(entry(0, 2.0, 0.0), 0);
  b.insert_if_better(entry(1, 1.0, 0.0), 0);
  auto p = b.replay_probs(0);
  EXPECT_NEAR(p[1], 1e-9, 1e-12);
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(b.sample_replay(0, rng), 0u);
}

TEST(SampleReplay, FrequenciesMatchProbabilities) {
  LevelBuffer<int> b(cfg(0.5, 0.0, 0.3));
  std::vector<double> reg{0.3, 1.2, 0.7, 2.0, 0.1}, nov{5.0, 1.0, 3.0, 2.0, 4.0};
  for (int i = 0; i < 5; ++i) b.insert_if_better(entry(i, reg[static_cast<std::size_t>(i)], nov[static_cast<std::size_t>(i)]), 0);
  auto p = b.replay_probs(0);
  std::vector<double> freq(5, 0.0);
  Rng rng(7);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) freq[b.sample_replay(0, rng)] += 1.0 / draws;
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(freq[i], p[i], 0.01);
}

TEST(BufferConfig, Validation) {
  BufferConfig c;
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = BufferConfig{};
  c.rho = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = BufferConfig{};
  c.capacity = 0;
  EXPECT_THROW(c.validate(), Error);
}
