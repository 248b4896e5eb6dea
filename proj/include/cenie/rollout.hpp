#pragma once

// Environment interaction: lockstep episodes for scoring and evaluation, and
// fixed-length multi-worker rollouts for PPO training.

#include <span>
#include <vector>

#include "cenie/coverage.hpp"
#include "cenie/maze.hpp"
#include "cenie/regret.hpp"
#include "cenie/student.hpp"

namespace cenie::rollout {

using student::ActionMode;
using student::Matrix;
using student::Vector;

// One (pose, action) pair, the unit of exact coverage counting.
struct Visit {
  int x = 0;
  int y = 0;
  int dir = 0;
  int action = 0;
  friend bool operator==(const Visit&, const Visit&) = default;
};

struct Episode {
  std::uint64_t level_id = 0;
  regret::ScoredTrajectory trajectory;
  std::vector<coverage::Feature> features;
  std::vector<Visit> visits;
  double episode_return = 0.0;
  bool solved = false;
  int steps = 0;
};

inline void write_observation(const maze::Observation& obs, Matrix& m, Eigen::Index row) {
  std::array<double, maze::kObsSize> buf{};
  maze::encode_observation(obs, buf);
  for (int j = 0; j < maze::kObsSize; ++j) m(row, j) = buf[static_cast<std::size_t>(j)];
}

// Runs one episode per level in lockstep with batched forward passes. Actions
// are drawn in level order at each step, so results depend only on the inputs
// and the rng state.
inline std::vector<Episode> run_episodes(const student::Policy& policy, std::span<const maze::Level* const> levels,
                                         int max_steps, double gamma, double gae_lambda, ActionMode mode, Rng& rng) {
  const std::size_t n = levels.size();
  std::vector<Episode> out(n);
  std::vector<maze::MazeState> states(n);
  std::vector<maze::Observation> obs(n);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    auto [s, o] = maze::reset_and_observe(*levels[i], max_steps);
    states[i] = s;
    obs[i] = o;
    out[i].level_id = levels[i]->id();
    out[i].trajectory.gamma = gamma;
    out[i].trajectory.gae_lambda = gae_lambda;
    active.push_back(i);
  }
  Matrix x;
  while (!active.empty()) {
    x.resize(static_cast<Eigen::Index>(active.size()), maze::kObsSize);
    for (std::size_t r = 0; r < active.size(); ++r) write_observation(obs[active[r]], x, static_cast<Eigen::Index>(r));
    const student::ForwardPass fp = policy.forward(x);
    std::vector<std::size_t> still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const std::size_t i = active[r];
      Episode& ep = out[i];
      const int a = student::select_action(fp.logits.row(static_cast<Eigen::Index>(r)), mode, rng);
      const maze::Pose pose = states[i].pose;
      ep.features.push_back(coverage::encode_state_action(states[i], static_cast<maze::Action>(a)));
      ep.visits.push_back({pose.cell.x, pose.cell.y, pose.dir, a});
      const maze::StepResult res = maze::step(states[i], static_cast<maze::Action>(a));
      ep.trajectory.rewards.push_back(res.reward);
      ep.trajectory.values.push_back(fp.values(static_cast<Eigen::Index>(r)));
      ep.trajectory.dones.push_back(res.done);
      ep.episode_return += res.reward;
      ep.solved = ep.solved || res.reached_goal;
      ep.steps += 1;
      states[i] = res.state;
      obs[i] = res.observation;
      if (res.done) ep.trajectory.values.push_back(0.0);
      else still.push_back(i);
    }
    active.swap(still);
  }
  return out;
}

inline Episode run_episode(const student::Policy& policy, const maze::Level& level, int max_steps, double gamma,
                           double gae_lambda, ActionMode mode, Rng& rng) {
  const maze::Level* one[] = {&level};
  return std::move(run_episodes(policy, one, max_steps, gamma, gae_lambda, mode, rng).front());
}

struct Rollout {
  student::Batch batch;                     // worker-major rows
  std::vector<coverage::Feature> features;  // aligned with batch rows
  std::vector<Visit> visits;
  std::vector<double> completed_returns;
  int solved_episodes = 0;
  double mean_pvl = 0.0;  // per-worker positive value loss, averaged
};

// workers x rollout_length steps on one level; finished episodes restart on
// the same level. Advantages are GAE with the final value as bootstrap.
inline Rollout collect_rollout(const student::Policy& policy, const maze::Level& level, int max_steps,
                               const student::PpoConfig& cfg, Rng& rng) {
  const int W = cfg.workers, L = cfg.rollout_length;
  const Eigen::Index N = static_cast<Eigen::Index>(W) * L;
  Rollout ro;
  student::Batch& b = ro.batch;
  b.observations.resize(N, maze::kObsSize);
  b.actions.resize(static_cast<std::size_t>(N));
  b.old_log_probs.resize(N);
  b.old_values.resize(N);
  ro.features.resize(static_cast<std::size_t>(N));
  ro.visits.resize(static_cast<std::size_t>(N));
  std::vector<double> rewards(static_cast<std::size_t>(N));
  std::vector<bool> dones(static_cast<std::size_t>(N));
  std::vector<double> running(static_cast<std::size_t>(W), 0.0);

  std::vector<maze::MazeState> states(static_cast<std::size_t>(W));
  std::vector<maze::Observation> obs(static_cast<std::size_t>(W));
  for (int w = 0; w < W; ++w) std::tie(states[static_cast<std::size_t>(w)], obs[static_cast<std::size_t>(w)]) = maze::reset_and_observe(level, max_steps);

  Matrix x(W, maze::kObsSize);
  for (int t = 0; t < L; ++t) {
    for (int w = 0; w < W; ++w) write_observation(obs[static_cast<std::size_t>(w)], x, w);
    const student::ForwardPass fp = policy.forward(x);
    const Matrix logp = student::log_softmax(fp.logits);
    for (int w = 0; w < W; ++w) {
      const auto sw = static_cast<std::size_t>(w);
      const Eigen::Index row = static_cast<Eigen::Index>(w) * L + t;
      const auto srow = static_cast<std::size_t>(row);
      const int a = student::select_action(fp.logits.row(w), ActionMode::Sample, rng);
      b.observations.row(row) = x.row(w);
      b.actions[srow] = a;
      b.old_log_probs(row) = logp(w, a);
      b.old_values(row) = fp.values(w);
      ro.features[srow] = coverage::encode_state_action(states[sw], static_cast<maze::Action>(a));
      ro.visits[srow] = {states[sw].pose.cell.x, states[sw].pose.cell.y, states[sw].pose.dir, a};
      const maze::StepResult res = maze::step(states[sw], static_cast<maze::Action>(a));
      rewards[srow] = res.reward;
      dones[srow] = res.done;
      running[sw] += res.reward;
      if (res.done) {
        ro.completed_returns.push_back(running[sw]);
        ro.solved_episodes += res.reached_goal;
        running[sw] = 0.0;
        std::tie(states[sw], obs[sw]) = maze::reset_and_observe(level, max_steps);
      } else {
        states[sw] = res.state;
        obs[sw] = res.observation;
      }
    }
  }
  for (int w = 0; w < W; ++w) write_observation(obs[static_cast<std::size_t>(w)], x, w);
  const Vector bootstrap = policy.forward(x).values;

  b.advantages.resize(N);
  b.returns.resize(N);
  for (int w = 0; w < W; ++w) {
    regret::ScoredTrajectory tr;
    tr.gamma = cfg.gamma;
    tr.gae_lambda = cfg.gae_lambda;
    const Eigen::Index base = static_cast<Eigen::Index>(w) * L;
    for (int t = 0; t < L; ++t) {
      const auto srow = static_cast<std::size_t>(base + t);
      tr.rewards.push_back(rewards[srow]);
      tr.values.push_back(b.old_values(base + t));
      tr.dones.push_back(dones[srow]);
    }
    tr.values.push_back(bootstrap(w));
    const regret::Advantages adv = regret::gae_advantages(tr);
    double pos = 0.0;
    for (int t = 0; t < L; ++t) {
      b.advantages(base + t) = adv.advantages[static_cast<std::size_t>(t)];
      b.returns(base + t) = adv.returns[static_cast<std::size_t>(t)];
      pos += std::max(adv.advantages[static_cast<std::size_t>(t)], 0.0);
    }
    ro.mean_pvl += pos / static_cast<double>(L) / static_cast<double>(W);
  }
  return ro;
}

}  // namespace cenie::rollout
