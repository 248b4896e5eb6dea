#pragma once

// Regret proxies computed from a single trajectory: TD errors, generalized
// advantages, positive value loss and maximum Monte Carlo.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cenie/common.hpp"

namespace cenie::regret {

// values has one more entry than rewards: V(s_0..s_T), with the bootstrap
// value last. dones[k] marks that the episode ended after step k, in which
// case values[k + 1] is ignored.
struct ScoredTrajectory {
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<bool> dones;
  double gamma = 0.995;
  double gae_lambda = 0.95;

  std::size_t steps() const { return rewards.size(); }

  void validate() const {
    if (values.size() != rewards.size() + 1 || dones.size() != rewards.size())
      throw Error(ErrorKind::DimensionMismatch,
                  "trajectory lengths inconsistent: rewards=" + std::to_string(rewards.size()) +
                      " values=" + std::to_string(values.size()) + " dones=" + std::to_string(dones.size()));
    if (!(gamma >= 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0))
      throw Error(ErrorKind::InvalidArgument, "gamma and gae_lambda must lie in [0, 1]");
  }
};

inline std::vector<double> td_errors(const ScoredTrajectory& traj) {
  traj.validate();
  std::vector<double> delta(traj.steps());
  for (std::size_t k = 0; k < traj.steps(); ++k) {
    const double next = traj.dones[k] ? 0.0 : traj.values[k + 1];
    delta[k] = traj.rewards[k] + traj.gamma * next - traj.values[k];
  }
  return delta;
}

struct Advantages {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + values, the value-regression target
};

// Backward GAE recursion A_t = delta_t + gamma*lambda*(1 - done_t)*A_{t+1}.
inline Advantages gae_advantages(const ScoredTrajectory& traj) {
  const std::vector<double> delta = td_errors(traj);
  const double decay = traj.gamma * traj.gae_lambda;
  Advantages out;
  out.advantages.resize(delta.size());
  out.returns.resize(delta.size());
  double running = 0.0;
  for (std::size_t i = delta.size(); i-- > 0;) {
    running = delta[i] + (traj.dones[i] ? 0.0 : decay * running);
    out.advantages[i] = running;
    out.returns[i] = running + traj.values[i];
  }
  return out;
}

// Positive value loss: (1/T) sum_t max(A_t, 0), with A_t the GAE advantage
// summed over k in [t, T-1].
inline double pvl_score(const ScoredTrajectory& traj) {
  if (traj.steps() == 0) throw Error(ErrorKind::EmptyInput, "positive value loss of an empty trajectory");
  const Advantages adv = gae_advantages(traj);
  double total = 0.0;
  for (double a : adv.advantages) total += std::max(a, 0.0);
  return total / static_cast<double>(traj.steps());
}

inline double episode_return(const ScoredTrajectory& traj) {
  double r = 0.0;
  for (double x : traj.rewards) r += x;
  return r;
}

// (1/T) sum_t (R_max - return(tau)); with a constant summand this is
// R_max - return(tau).
inline double maxmc_score(const ScoredTrajectory& traj, double level_max_return) {
  if (traj.steps() == 0) return 0.0;
  const double gap = level_max_return - episode_return(traj);
  double total = 0.0;
  for (std::size_t t = 0; t < traj.steps(); ++t) total += gap;
  return total / static_cast<double>(traj.steps());
}

// Running maximum return per level, seeded by the first observed return.
class MaxReturnTracker {
 public:
  double observe(std::uint64_t level_id, double episode_return) {
    auto [it, inserted] = best_.try_emplace(level_id, episode_return);
    if (!inserted) it->second = std::max(it->second, episode_return);
    return it->second;
  }
  std::optional<double> max_return(std::uint64_t level_id) const {
    auto it = best_.find(level_id);
    if (it == best_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::unordered_map<std::uint64_t, double> best_;
};

}  // namespace cenie::regret
