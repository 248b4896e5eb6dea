#pragma once

// Partially observable grid mazes: levels, transitions, the 5x5 forward view,
// a uniform random generator, a random-edit mutator and a fixed evaluation
// suite.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "cenie/common.hpp"
#include "json.hpp"

namespace cenie::maze {

enum class Action : int { Forward = 0, Left = 1, Right = 2 };
enum class CellKind : std::uint8_t { Empty = 0, Wall = 1, Goal = 2, OutOfBounds = 3 };

inline constexpr int kNumActions = 3;
inline constexpr int kNumDirs = 4;
inline constexpr int kView = 5;
inline constexpr int kViewCells = kView * kView;
inline constexpr int kCellKinds = 4;
inline constexpr int kObsSize = kViewCells * kCellKinds + kNumDirs;  // 104

// Directions: 0 = north (y decreasing), 1 = east, 2 = south, 3 = west.
inline constexpr std::array<int, 4> kDx{0, 1, 0, -1};
inline constexpr std::array<int, 4> kDy{-1, 0, 1, 0};

struct Pos {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pos&, const Pos&) = default;
};

struct Pose {
  Pos cell;
  int dir = 0;
  friend bool operator==(const Pose&, const Pose&) = default;
};

inline int turn_left(int dir) { return (dir + 3) % 4; }
inline int turn_right(int dir) { return (dir + 1) % 4; }
inline int manhattan(Pos a, Pos b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

class Level {
 public:
  Level(int width, int height, std::vector<std::uint8_t> walls, Pose agent, Pos goal)
      : width_(width), height_(height), walls_(std::move(walls)), agent_(agent), goal_(goal) {
    if (width_ < 1 || height_ < 1 || width_ * height_ < 2)
      throw Error(ErrorKind::InvalidArgument, "level needs at least two cells");
    if (walls_.size() != static_cast<std::size_t>(width_ * height_))
      throw Error(ErrorKind::DimensionMismatch, "wall bitmap size does not match grid");
    for (auto& w : walls_) w = w ? 1 : 0;
    if (!in_bounds(agent_.cell) || !in_bounds(goal_)) throw Error(ErrorKind::InvalidArgument, "agent or goal out of bounds");
    if (agent_.dir < 0 || agent_.dir > 3) throw Error(ErrorKind::InvalidArgument, "orientation must be in [0, 3]");
    if (agent_.cell == goal_) throw Error(ErrorKind::InvalidArgument, "agent start and goal coincide");
    if (is_wall(agent_.cell) || is_wall(goal_)) throw Error(ErrorKind::InvalidArgument, "agent or goal placed on a wall");
    Fnv1a h;
    h.value(width_);
    h.value(height_);
    h.bytes(walls_.data(), walls_.size());
    h.value(agent_.cell.x);
    h.value(agent_.cell.y);
    h.value(agent_.dir);
    h.value(goal_.x);
    h.value(goal_.y);
    id_ = h.digest();
  }

  static Level empty(int width, int height, Pose agent, Pos goal) {
    return Level(width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width * height), 0), agent, goal);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int cell_count() const { return width_ * height_; }
  Pose agent() const { return agent_; }
  Pos goal() const { return goal_; }
  std::uint64_t id() const { return id_; }
  const std::vector<std::uint8_t>& wall_bitmap() const { return walls_; }

  bool in_bounds(Pos p) const { return p.x >= 0 && p.y >= 0 && p.x < width_ && p.y < height_; }
  int index(Pos p) const { return p.y * width_ + p.x; }
  Pos cell_at(int index) const { return {index % width_, index / width_}; }
  bool is_wall(Pos p) const { return walls_[static_cast<std::size_t>(index(p))] != 0; }

  int wall_count() const {
    int n = 0;
    for (auto w : walls_) n += w;
    return n;
  }

  CellKind kind(Pos p) const {
    if (!in_bounds(p)) return CellKind::OutOfBounds;
    if (is_wall(p)) return CellKind::Wall;
    if (p == goal_) return CellKind::Goal;
    return CellKind::Empty;
  }

  friend bool operator==(const Level& a, const Level& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.walls_ == b.walls_ && a.agent_ == b.agent_ &&
           a.goal_ == b.goal_;
  }

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> walls_;
  Pose agent_;
  Pos goal_;
  std::uint64_t id_ = 0;
};

// Row-major, '#' wall, '^>v<' agent, 'G' goal, '.' empty.
inline std::string to_ascii(const Level& level) {
  static constexpr char kAgent[] = {'^', '>', 'v', '<'};
  std::string out;
  for (int y = 0; y < level.height(); ++y) {
    for (int x = 0; x < level.width(); ++x) {
      Pos p{x, y};
      if (p == level.agent().cell) out += kAgent[level.agent().dir];
      else if (p == level.goal()) out += 'G';
      else out += level.is_wall(p) ? '#' : '.';
    }
    out += '\n';
  }
  return out;
}

inline Level level_from_ascii(const std::vector<std::string>& rows) {
  if (rows.empty()) throw Error(ErrorKind::InvalidArgument, "empty ascii level");
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows[0].size());
  std::vector<std::uint8_t> walls(static_cast<std::size_t>(w * h), 0);
  std::optional<Pose> agent;
  std::optional<Pos> goal;
  for (int y = 0; y < h; ++y) {
    if (static_cast<int>(rows[static_cast<std::size_t>(y)].size()) != w)
      throw Error(ErrorKind::InvalidArgument, "ragged ascii level");
    for (int x = 0; x < w; ++x) {
      const char c = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
      switch (c) {
        case '#': walls[static_cast<std::size_t>(y * w + x)] = 1; break;
        case '.': break;
        case 'G': goal = Pos{x, y}; break;
        case '^': agent = Pose{{x, y}, 0}; break;
        case '>': agent = Pose{{x, y}, 1}; break;
        case 'v': agent = Pose{{x, y}, 2}; break;
        case '<': agent = Pose{{x, y}, 3}; break;
        default: throw Error(ErrorKind::InvalidArgument, std::string("unknown ascii cell '") + c + "'");
      }
    }
  }
  if (!agent || !goal) throw Error(ErrorKind::InvalidArgument, "ascii level needs an agent and a goal");
  return Level(w, h, std::move(walls), *agent, *goal);
}

inline nlohmann::json to_json(const Level& level) {
  nlohmann::json walls = nlohmann::json::array();
  for (int i = 0; i < level.cell_count(); ++i) {
    if (level.wall_bitmap()[static_cast<std::size_t>(i)]) {
      Pos p = level.cell_at(i);
      walls.push_back({p.x, p.y});
    }
  }
  return {{"width", level.width()},
          {"height", level.height()},
          {"walls", walls},
          {"agent", {level.agent().cell.x, level.agent().cell.y, level.agent().dir}},
          {"goal", {level.goal().x, level.goal().y}}};
}

inline Level level_from_json(const nlohmann::json& j) {
  const int w = j.at("width").get<int>();
  const int h = j.at("height").get<int>();
  if (w < 1 || h < 1 || w * h < 2) throw Error(ErrorKind::InvalidArgument, "level needs at least two cells");
  std::vector<std::uint8_t> walls(static_cast<std::size_t>(w * h), 0);
  for (const auto& c : j.at("walls")) {
    const int x = c.at(0).get<int>(), y = c.at(1).get<int>();
    if (x < 0 || y < 0 || x >= w || y >= h) throw Error(ErrorKind::InvalidArgument, "wall out of bounds");
    walls[static_cast<std::size_t>(y * w + x)] = 1;
  }
  const auto& a = j.at("agent");
  const auto& g = j.at("goal");
  return Level(w, h, std::move(walls), Pose{{a.at(0).get<int>(), a.at(1).get<int>()}, a.at(2).get<int>()},
               Pos{g.at(0).get<int>(), g.at(1).get<int>()});
}

// View cell (row r, column c): r = 0 is the row directly ahead of the agent,
// r = 4 the farthest; c = 0 is two cells to the agent's left.
struct Observation {
  std::array<CellKind, kViewCells> view{};
  int dir = 0;

  CellKind at(int r, int c) const { return view[static_cast<std::size_t>(r * kView + c)]; }
};

inline Pos view_cell(Pose pose, int r, int c) {
  const int fwd = r + 1;
  const int lat = c - 2;
  const int right = turn_right(pose.dir);
  return {pose.cell.x + fwd * kDx[static_cast<std::size_t>(pose.dir)] + lat * kDx[static_cast<std::size_t>(right)],
          pose.cell.y + fwd * kDy[static_cast<std::size_t>(pose.dir)] + lat * kDy[static_cast<std::size_t>(right)]};
}

inline Observation observe(const Level& level, Pose pose) {
  Observation obs;
  obs.dir = pose.dir;
  for (int r = 0; r < kView; ++r)
    for (int c = 0; c < kView; ++c) obs.view[static_cast<std::size_t>(r * kView + c)] = level.kind(view_cell(pose, r, c));
  return obs;
}

// One-hot cell kinds for the 25 view cells followed by the orientation one-hot.
template <typename Out>
void encode_observation(const Observation& obs, Out&& out) {
  for (int i = 0; i < kObsSize; ++i) out[i] = 0.0;
  for (int i = 0; i < kViewCells; ++i)
    out[i * kCellKinds + static_cast<int>(obs.view[static_cast<std::size_t>(i)])] = 1.0;
  out[kViewCells * kCellKinds + obs.dir] = 1.0;
}

struct MazeState {
  const Level* level = nullptr;
  Pose pose;
  int steps_taken = 0;
  int max_steps = 250;
  bool done = false;
};

struct StepResult {
  MazeState state;
  Observation observation;
  double reward = 0.0;
  bool done = false;
  bool reached_goal = false;
};

inline MazeState reset(const Level& level, int max_steps) {
  if (max_steps < 1) throw Error(ErrorKind::InvalidArgument, "max_steps must be >= 1");
  return MazeState{&level, level.agent(), 0, max_steps, false};
}

inline std::pair<MazeState, Observation> reset_and_observe(const Level& level, int max_steps) {
  MazeState s = reset(level, max_steps);
  return {s, observe(level, s.pose)};
}

inline StepResult step(const MazeState& state, Action action) {
  if (state.done) throw Error(ErrorKind::InvalidState, "step called on a finished episode");
  if (!state.level) throw Error(ErrorKind::InvalidState, "state has no level");
  const Level& level = *state.level;
  StepResult r;
  r.state = state;
  MazeState& s = r.state;
  s.steps_taken += 1;
  switch (action) {
    case Action::Left: s.pose.dir = turn_left(s.pose.dir); break;
    case Action::Right: s.pose.dir = turn_right(s.pose.dir); break;
    case Action::Forward: {
      Pos next{s.pose.cell.x + kDx[static_cast<std::size_t>(s.pose.dir)],
               s.pose.cell.y + kDy[static_cast<std::size_t>(s.pose.dir)]};
      if (level.in_bounds(next) && !level.is_wall(next)) s.pose.cell = next;
      break;
    }
    default: throw Error(ErrorKind::InvalidArgument, "unknown action");
  }
  if (s.pose.cell == level.goal()) {
    r.reached_goal = true;
    r.reward = 1.0 - static_cast<double>(s.steps_taken) / static_cast<double>(s.max_steps);
    s.done = true;
  } else if (s.steps_taken >= s.max_steps) {
    s.done = true;
  }
  r.done = s.done;
  r.observation = observe(level, s.pose);
  return r;
}

// BFS over (cell, orientation) with the three actions.
inline std::optional<int> shortest_path_length(const Level& level) {
  const int n = level.cell_count() * kNumDirs;
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  auto key = [&](Pose p) { return level.index(p.cell) * kNumDirs + p.dir; };
  std::deque<Pose> queue;
  const Pose start = level.agent();
  dist[static_cast<std::size_t>(key(start))] = 0;
  queue.push_back(start);
  while (!queue.empty()) {
    Pose p = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(key(p))];
    if (p.cell == level.goal()) return d;
    Pos fwd{p.cell.x + kDx[static_cast<std::size_t>(p.dir)], p.cell.y + kDy[static_cast<std::size_t>(p.dir)]};
    Pose nexts[3] = {{level.in_bounds(fwd) && !level.is_wall(fwd) ? fwd : p.cell, p.dir},
                     {p.cell, turn_left(p.dir)},
                     {p.cell, turn_right(p.dir)}};
    for (const Pose& q : nexts) {
      auto& slot = dist[static_cast<std::size_t>(key(q))];
      if (slot < 0) {
        slot = d + 1;
        queue.push_back(q);
      }
    }
  }
  return std::nullopt;
}

// Free cells 4-connected to the agent's start cell.
inline std::vector<int> reachable_cells(const Level& level) {
  std::vector<char> seen(static_cast<std::size_t>(level.cell_count()), 0);
  std::vector<int> out;
  std::deque<Pos> queue{level.agent().cell};
  seen[static_cast<std::size_t>(level.index(level.agent().cell))] = 1;
  while (!queue.empty()) {
    Pos p = queue.front();
    queue.pop_front();
    out.push_back(level.index(p));
    for (int d = 0; d < 4; ++d) {
      Pos q{p.x + kDx[static_cast<std::size_t>(d)], p.y + kDy[static_cast<std::size_t>(d)]};
      if (!level.in_bounds(q) || level.is_wall(q)) continue;
      auto& s = seen[static_cast<std::size_t>(level.index(q))];
      if (!s) {
        s = 1;
        queue.push_back(q);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct EnvConfig {
  int grid_size = 15;
  int min_walls = 0;
  int max_walls = 60;
  int max_steps = 250;

  void validate() const {
    if (grid_size < 5) throw Error(ErrorKind::InvalidArgument, "grid_size must be >= 5");
    if (min_walls < 0 || max_walls < min_walls) throw Error(ErrorKind::InvalidArgument, "bad wall count range");
    if (max_walls + 2 > grid_size * grid_size)
      throw Error(ErrorKind::InvalidArgument, "wall count range does not fit the grid");
    if (max_steps < 1) throw Error(ErrorKind::InvalidArgument, "max_steps must be >= 1");
  }
};

// Uniform wall count, then distinct wall, agent and goal cells from one
// partial shuffle; orientation uniform. Solvability is not enforced.
inline Level generate_random_level(int width, int height, int min_walls, int max_walls, Rng& rng) {
  const int cells = width * height;
  if (min_walls < 0 || max_walls < min_walls || max_walls + 2 > cells)
    throw Error(ErrorKind::InvalidArgument, "wall count range [" + std::to_string(min_walls) + ", " +
                                                std::to_string(max_walls) + "] cannot be placed in " +
                                                std::to_string(width) + "x" + std::to_string(height));
  const int n_walls = min_walls + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_walls - min_walls + 1)));
  std::vector<int> order(static_cast<std::size_t>(cells));
  for (int i = 0; i < cells; ++i) order[static_cast<std::size_t>(i)] = i;
  const int picks = n_walls + 2;
  for (int i = 0; i < picks; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + uniform_index(rng, static_cast<std::size_t>(cells - i));
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
  }
  std::vector<std::uint8_t> walls(static_cast<std::size_t>(cells), 0);
  for (int i = 0; i < n_walls; ++i) walls[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  const int a = order[static_cast<std::size_t>(n_walls)];
  const int g = order[static_cast<std::size_t>(n_walls + 1)];
  const int dir = static_cast<int>(uniform_index(rng, 4));
  return Level(width, height, std::move(walls), Pose{{a % width, a / width}, dir}, Pos{g % width, g / width});
}

inline Level generate_random_level(const EnvConfig& env, Rng& rng) {
  return generate_random_level(env.grid_size, env.grid_size, env.min_walls, env.max_walls, rng);
}

enum class EditKind { ToggleWall = 0, MoveGoal = 1, MoveAgent = 2 };

// Applies num_edits primitives, each uniformly a wall toggle on a cell that is
// neither start nor goal, a goal move or a start move to a free cell.
inline Level edit_level(const Level& level, int num_edits, Rng& rng) {
  if (num_edits < 1) throw Error(ErrorKind::InvalidArgument, "num_edits must be >= 1");
  std::vector<std::uint8_t> walls = level.wall_bitmap();
  Pose agent = level.agent();
  Pos goal = level.goal();
  const int w = level.width();
  const int cells = level.cell_count();
  const auto idx = [&](Pos p) { return static_cast<std::size_t>(p.y * w + p.x); };
  const auto pos = [&](std::size_t i) { return Pos{static_cast<int>(i) % w, static_cast<int>(i) / w}; };

  for (int e = 0; e < num_edits; ++e) {
    const auto kind = static_cast<EditKind>(uniform_index(rng, 3));
    std::vector<std::size_t> options;
    for (std::size_t i = 0; i < static_cast<std::size_t>(cells); ++i) {
      const bool special = i == idx(agent.cell) || i == idx(goal);
      if (kind == EditKind::ToggleWall) {
        if (!special) options.push_back(i);
      } else if (!special && !walls[i]) {
        options.push_back(i);
      }
    }
    if (options.empty()) continue;
    const std::size_t pick = options[uniform_index(rng, options.size())];
    switch (kind) {
      case EditKind::ToggleWall: walls[pick] ^= 1; break;
      case EditKind::MoveGoal: goal = pos(pick); break;
      case EditKind::MoveAgent: agent.cell = pos(pick); break;
    }
  }
  return Level(level.width(), level.height(), std::move(walls), agent, goal);
}

struct NamedLevel {
  std::string name;
  Level level;
};

namespace detail {

inline void set_wall(std::vector<std::uint8_t>& walls, int n, int x, int y, bool on = true) {
  walls[static_cast<std::size_t>(y * n + x)] = on ? 1 : 0;
}

}  // namespace detail

// Six hand-built solvable layouts on an n x n grid (n >= 9).
inline std::vector<NamedLevel> held_out_suite(int n) {
  if (n < 9) throw Error(ErrorKind::InvalidArgument, "held-out suite needs grid_size >= 9");
  using detail::set_wall;
  const auto blank = [n] { return std::vector<std::uint8_t>(static_cast<std::size_t>(n * n), 0); };
  const int m = n / 2;
  std::vector<NamedLevel> suite;

  suite.push_back({"EmptyRoom", Level(n, n, blank(), Pose{{1, 1}, 1}, Pos{n - 2, n - 2})});

  {
    auto w = blank();
    for (int i = 0; i < n; ++i) {
      set_wall(w, n, m, i);
      set_wall(w, n, i, m);
    }
    set_wall(w, n, m, m / 2, false);
    set_wall(w, n, m, m + (n - m) / 2, false);
    set_wall(w, n, m / 2, m, false);
    set_wall(w, n, m + (n - m) / 2, m, false);
    suite.push_back({"FourRooms", Level(n, n, std::move(w), Pose{{1, 1}, 1}, Pos{n - 2, n - 2})});
  }

  {
    auto w = blank();
    for (int y = 0; y < n; ++y) set_wall(w, n, m, y);
    set_wall(w, n, m, n / 4, false);
    for (int x = m + 1; x < n; ++x) set_wall(w, n, x, m);
    set_wall(w, n, m + (n - m) / 2, m, false);
    suite.push_back({"SimpleCrossing", Level(n, n, std::move(w), Pose{{1, n - 2}, 0}, Pos{n - 2, n - 2})});
  }

  {
    auto w = blank();
    bool gap_right = true;
    for (int y = 2; y <= n - 3; y += 2) {
      for (int x = 0; x < n; ++x) set_wall(w, n, x, y);
      set_wall(w, n, gap_right ? n - 1 : 0, y, false);
      gap_right = !gap_right;
    }
    suite.push_back({"Labyrinth-mini", Level(n, n, std::move(w), Pose{{0, 0}, 1}, Pos{0, n - 1})});
  }

  {
    auto w = blank();
    std::vector<int> lines{n / 4, n / 2, (3 * n) / 4};
    for (int c : lines)
      for (int i = 0; i < n; ++i) {
        set_wall(w, n, c, i);
        set_wall(w, n, i, c);
      }
    // One doorway per wall segment, at the segment midpoint.
    std::vector<int> bounds{-1, lines[0], lines[1], lines[2], n};
    for (int c : lines)
      for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
        const int lo = bounds[s] + 1, hi = bounds[s + 1] - 1;
        if (lo > hi) continue;
        const int mid = (lo + hi) / 2;
        set_wall(w, n, c, mid, false);
        set_wall(w, n, mid, c, false);
      }
    suite.push_back({"SixteenRooms-mini", Level(n, n, std::move(w), Pose{{0, 0}, 1}, Pos{n - 1, n - 1})});
  }

  {
    auto w = blank();
    int ring = 0;
    for (int o = 1; n - 1 - 2 * o >= 2; o += 2, ++ring) {
      const int lo = o, hi = n - 1 - o;
      for (int i = lo; i <= hi; ++i) {
        set_wall(w, n, i, lo);
        set_wall(w, n, i, hi);
        set_wall(w, n, lo, i);
        set_wall(w, n, hi, i);
      }
      const int mid = (lo + hi) / 2;
      if (ring % 2 == 0) set_wall(w, n, mid, lo, false);
      else set_wall(w, n, mid, hi, false);
    }
    suite.push_back({"Maze-spiral", Level(n, n, std::move(w), Pose{{0, 0}, 1}, Pos{m, m})});
  }
  return suite;
}

}  // namespace cenie::maze
