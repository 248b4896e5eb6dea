#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <set>
#include <unordered_set>

#include "cenie/maze.hpp"

using namespace cenie;
using namespace cenie::maze;

namespace {

// Recursive flood fill over free cells, independent of the BFS helpers.
void flood(const Level& level, Pos p, std::vector<char>& seen) {
  if (!level.in_bounds(p) || level.is_wall(p) || seen[static_cast<std::size_t>(level.index(p))]) return;
  seen[static_cast<std::size_t>(level.index(p))] = 1;
  flood(level, {p.x + 1, p.y}, seen);
  flood(level, {p.x - 1, p.y}, seen);
  flood(level, {p.x, p.y + 1}, seen);
  flood(level, {p.x, p.y - 1}, seen);
}

bool goal_reachable(const Level& level) {
  std::vector<char> seen(static_cast<std::size_t>(level.cell_count()), 0);
  flood(level, level.agent().cell, seen);
  return seen[static_cast<std::size_t>(level.index(level.goal()))] != 0;
}

int primitive_differences(const Level& a, const Level& b) {
  int diff = 0;
  for (std::size_t i = 0; i < a.wall_bitmap().size(); ++i) diff += a.wall_bitmap()[i] != b.wall_bitmap()[i];
  diff += !(a.agent() == b.agent());
  diff += !(a.goal() == b.goal());
  return diff;
}

}  // namespace

TEST(Level, RejectsInvalidPlacement) {
  EXPECT_THROW(Level::empty(5, 5, Pose{{1, 1}, 0}, Pos{1, 1}), Error);
  EXPECT_THROW(Level::empty(5, 5, Pose{{5, 1}, 0}, Pos{1, 1}), Error);
  EXPECT_THROW(Level::empty(5, 5, Pose{{0, 0}, 4}, Pos{1, 1}), Error);
  EXPECT_THROW(level_from_ascii({"#G", ".#"}), Error);
  EXPECT_THROW(level_from_ascii({">.G", ".."}), Error);
}

TEST(Level, AsciiAndJsonRoundTrip) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    Level level = generate_random_level(9, 7, 0, 30, rng);
    Level from_json = level_from_json(nlohmann::json::parse(to_json(level).dump()));
    EXPECT_EQ(from_json, level);
    EXPECT_EQ(from_json.id(), level.id());
    std::vector<std::string> rows;
    std::string art = to_ascii(level), row;
    for (char c : art) {
      if (c == '\n') rows.push_back(std::exchange(row, {}));
      else row += c;
    }
    EXPECT_EQ(level_from_ascii(rows), level);
  }
}

TEST(Level, IdDependsOnContent) {
  Level a = level_from_ascii({">..", "...", "..G"});
  Level b = level_from_ascii({"v..", "...", "..G"});
  Level c = level_from_ascii({">#.", "...", "..G"});
  EXPECT_NE(a.id(), b.id());
  EXPECT_NE(a.id(), c.id());
  EXPECT_EQ(a.id(), level_from_ascii({">..", "...", "..G"}).id());
}

TEST(Step, GoalAtStepFiftyGivesPointEight) {
  Level level = Level::empty(15, 15, Pose{{0, 0}, 0}, Pos{1, 0});
  MazeState s = reset(level, 250);
  for (int i = 0; i < 48; ++i) {
    auto r = step(s, Action::Forward);  // bumps the north boundary
    EXPECT_EQ(r.reward, 0.0);
    s = r.state;
  }
  s = step(s, Action::Right).state;
  auto last = step(s, Action::Forward);
  EXPECT_TRUE(last.done);
  EXPECT_TRUE(last.reached_goal);
  EXPECT_EQ(last.state.steps_taken, 50);
  EXPECT_NEAR(last.reward, 0.8, 1e-15);
}

TEST(Step, TimeoutGivesZero) {
  Level level = level_from_ascii({">#G"});
  MazeState s = reset(level, 10);
  double total = 0.0;
  for (int i = 0; i < 10; ++i) {
    auto r = step(s, static_cast<Action>(i % 3));
    total += r.reward;
    s = r.state;
  }
  EXPECT_TRUE(s.done);
  EXPECT_EQ(total, 0.0);
  EXPECT_THROW(step(s, Action::Forward), Error);
}

TEST(Step, WallBumpKeepsPose) {
  Level level = level_from_ascii({">#G", "..."});
  MazeState s = reset(level, 100);
  auto r = step(s, Action::Forward);
  EXPECT_EQ(r.state.pose, s.pose);
  EXPECT_EQ(r.state.steps_taken, 1);
  EXPECT_FALSE(r.done);
  auto t = step(r.state, Action::Left);
  EXPECT_EQ(t.state.pose.dir, 0);
  EXPECT_EQ(t.state.pose.cell, s.pose.cell);
  EXPECT_EQ(step(r.state, Action::Right).state.pose.dir, 2);
}

TEST(Step, DeterministicAndRewardBounded) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Level level = generate_random_level(9, 9, 0, 20, rng);
    MazeState s = reset(level, 100);
    double total = 0.0;
    bool reached = false;
    while (!s.done) {
      const auto a = static_cast<Action>(uniform_index(rng, 3));
      auto r1 = step(s, a);
      auto r2 = step(s, a);
      ASSERT_EQ(r1.state.pose, r2.state.pose);
      ASSERT_EQ(r1.reward, r2.reward);
      ASSERT_FALSE(level.is_wall(r1.state.pose.cell));
      total += r1.reward;
      reached = reached || r1.reached_goal;
      s = r1.state;
    }
    EXPECT_GE(total, 0.0);
    EXPECT_LE(total, 1.0);
    if (!reached) {
      EXPECT_EQ(total, 0.0);
    }
    EXPECT_LE(s.steps_taken, 100);
  }
}

TEST(Observe, ResetIsRepeatable) {
  Level level = level_from_ascii({".....", ".>...", "...G.", "....."});
  auto [s1, o1] = reset_and_observe(level, 50);
  auto [s2, o2] = reset_and_observe(level, 50);
  EXPECT_EQ(s1.pose, s2.pose);
  EXPECT_EQ(o1.view, o2.view);
  EXPECT_EQ(o1.dir, 1);
}

TEST(Observe, BoundaryFacingOutwardIsOutOfBounds) {
  Level level = Level::empty(9, 9, Pose{{4, 0}, 0}, Pos{4, 8});
  Observation obs = observe(level, level.agent());
  for (CellKind k : obs.view) EXPECT_EQ(k, CellKind::OutOfBounds);
}

TEST(Observe, GoalTwoCellsAhead) {
  Level level = Level::empty(9, 9, Pose{{2, 4}, 1}, Pos{4, 4});
  Observation obs = observe(level, level.agent());
  EXPECT_EQ(obs.at(1, 2), CellKind::Goal);
  int goals = 0;
  for (CellKind k : obs.view) goals += k == CellKind::Goal;
  EXPECT_EQ(goals, 1);
}

TEST(Observe, LateralOrientation) {
  // Facing south, column 0 is to the agent's left, which is east.
  Level level = level_from_ascii({".....", "..v..", ".....", "...#G"});
  Observation obs = observe(level, level.agent());
  EXPECT_EQ(obs.at(1, 1), CellKind::Wall);
  EXPECT_EQ(obs.at(1, 0), CellKind::Goal);
  EXPECT_EQ(obs.at(0, 2), CellKind::Empty);
}

TEST(Observe, OnlyForwardWindowIsVisible) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Level level = generate_random_level(11, 11, 0, 40, rng);
    const Pose pose = level.agent();
    std::set<int> window;
    for (int r = 0; r < kView; ++r)
      for (int c = 0; c < kView; ++c) {
        Pos p = view_cell(pose, r, c);
        if (level.in_bounds(p)) window.insert(level.index(p));
      }
    // Toggle a wall outside the window: the observation must not change.
    for (int i = 0; i < level.cell_count(); ++i) {
      Pos p = level.cell_at(i);
      if (window.count(i) || p == pose.cell || p == level.goal()) continue;
      auto walls = level.wall_bitmap();
      walls[static_cast<std::size_t>(i)] ^= 1;
      Level other(level.width(), level.height(), walls, pose, level.goal());
      ASSERT_EQ(observe(other, pose).view, observe(level, pose).view);
      break;
    }
  }
}

TEST(Observe, EncodingIsOneHot) {
  Level level = level_from_ascii({"..#..", "..^..", "G...."});
  std::array<double, kObsSize> x{};
  encode_observation(observe(level, level.agent()), x);
  double ones = 0.0;
  for (double v : x) {
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    ones += v;
  }
  EXPECT_EQ(ones, kViewCells + 1);
  EXPECT_EQ(x[kViewCells * kCellKinds + 0], 1.0);
}

TEST(ShortestPath, AdjacentGoal) {
  EXPECT_EQ(shortest_path_length(level_from_ascii({">G"})), 1);
  EXPECT_EQ(shortest_path_length(level_from_ascii({"<G"})), 3);
}

TEST(ShortestPath, WalledOffIsUnreachable) {
  EXPECT_FALSE(shortest_path_length(level_from_ascii({">.#..", "..#.G", "..#.."})).has_value());
}

TEST(ShortestPath, AgreesWithFloodFill) {
  Rng rng(21);
  int solvable = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    Level level = generate_random_level(9, 9, 0, 40, rng);
    auto len = shortest_path_length(level);
    ASSERT_EQ(len.has_value(), goal_reachable(level));
    if (len) {
      ++solvable;
      EXPECT_GE(*len, manhattan(level.agent().cell, level.goal()));
    }
    auto cells = reachable_cells(level);
    std::vector<char> seen(static_cast<std::size_t>(level.cell_count()), 0);
    flood(level, level.agent().cell, seen);
    EXPECT_EQ(static_cast<long>(cells.size()), std::count(seen.begin(), seen.end(), 1));
  }
  EXPECT_GT(solvable, 100);
  EXPECT_LT(solvable, 2000);
}

TEST(Generator, EmptyRangeGivesEmptyRoom) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(generate_random_level(9, 9, 0, 0, rng).wall_count(), 0);
}

TEST(Generator, SeedDeterminism) {
  Rng a(77), b(77);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(generate_random_level(9, 9, 0, 20, a).id(), generate_random_level(9, 9, 0, 20, b).id());
}

TEST(Generator, RejectsImpossibleRange) {
  Rng rng(1);
  EXPECT_THROW(generate_random_level(3, 3, 0, 8, rng), Error);
  EXPECT_NO_THROW(generate_random_level(3, 3, 7, 7, rng));
}

TEST(Generator, WallCountHistogramIsUniform) {
  Rng rng(0);
  const int lo = 0, hi = 20, samples = 10000;
  std::vector<double> counts(hi - lo + 1, 0.0);
  for (int i = 0; i < samples; ++i) counts[static_cast<std::size_t>(generate_random_level(9, 9, lo, hi, rng).wall_count() - lo)] += 1.0;
  const double expected = static_cast<double>(samples) / static_cast<double>(counts.size());
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01);
}

TEST(Editor, SingleEditChangesOnePrimitive) {
  Rng rng(3);
  Level room = Level::empty(9, 9, Pose{{1, 1}, 1}, Pos{7, 7});
  for (int i = 0; i < 300; ++i) {
    Level edited = edit_level(room, 1, rng);
    EXPECT_EQ(primitive_differences(room, edited), 1);
  }
  EXPECT_THROW(edit_level(room, 0, rng), Error);
}

TEST(Editor, KeepsInvariantsAndUsuallyChangesId) {
  Rng rng(4);
  int changed = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng gen(static_cast<std::uint64_t>(seed));
    Level level = generate_random_level(9, 9, 0, 20, gen);
    Level edited = edit_level(level, 5, rng);
    EXPECT_NE(edited.agent().cell, edited.goal());
    EXPECT_FALSE(edited.is_wall(edited.goal()));
    EXPECT_FALSE(edited.is_wall(edited.agent().cell));
    EXPECT_EQ(edited.agent().dir, level.agent().dir);
    EXPECT_LE(primitive_differences(level, edited), 5);
    changed += edited.id() != level.id();
  }
  EXPECT_GE(changed, 98);
}

TEST(HeldOutSuite, SolvableAndDeterministic) {
  for (int n = 9; n <= 15; ++n) {
    auto suite = held_out_suite(n);
    ASSERT_EQ(suite.size(), 6u);
    auto again = held_out_suite(n);
    for (std::size_t i = 0; i < suite.size(); ++i) {
      EXPECT_TRUE(shortest_path_length(suite[i].level).has_value()) << suite[i].name << " n=" << n;
      EXPECT_EQ(suite[i].level.id(), again[i].level.id());
    }
  }
  std::vector<std::string> names;
  for (auto& l : held_out_suite(9)) names.push_back(l.name);
  EXPECT_EQ(names, (std::vector<std::string>{"EmptyRoom", "FourRooms", "SimpleCrossing", "Labyrinth-mini",
                                             "SixteenRooms-mini", "Maze-spiral"}));
  EXPECT_THROW(held_out_suite(8), Error);
}

TEST(HeldOutSuite, DisjointFromRandomLevels) {
  std::unordered_set<std::uint64_t> suite_ids;
  for (auto& l : held_out_suite(9)) suite_ids.insert(l.level.id());
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) EXPECT_FALSE(suite_ids.count(generate_random_level(9, 9, 0, 20, rng).id()));
}
