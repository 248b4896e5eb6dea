#pragma once

// Bounded level store with rank-prioritized replay. Replay probability mixes
// a novelty channel and a regret channel (weight alpha on novelty) and then a
// staleness channel (weight rho).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cenie/common.hpp"

namespace cenie::buffer {

struct BufferConfig {
  std::size_t capacity = 4000;
  double beta = 0.3;          // rank temperature
  double rho = 0.5;           // staleness mixing
  double alpha = 0.5;         // novelty weight
  double replay_rate = 0.5;   // probability of taking the replay branch

  void validate() const {
    if (capacity < 1) throw Error(ErrorKind::InvalidArgument, "buffer capacity must be >= 1");
    if (!(beta > 0.0)) throw Error(ErrorKind::InvalidArgument, "beta must be > 0");
    for (auto [name, v] : {std::pair{"rho", rho}, {"alpha", alpha}, {"replay_rate", replay_rate}})
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidArgument, std::string(name) + " must lie in [0, 1]");
  }
};

template <typename LevelT>
struct BufferEntry {
  LevelT level;
  double regret_score = 0.0;
  double novelty_score = 0.0;
  std::uint64_t last_replay_episode = 0;
  std::uint64_t inserted_episode = 0;
};

// P_i = h_i^beta / sum_j h_j^beta with h = 1/rank, rank 1 = highest score.
// Tied scores share the smallest rank among them.
inline std::vector<double> rank_prioritized_probs(std::span<const double> scores, double beta) {
  if (scores.empty()) throw Error(ErrorKind::EmptyInput, "no scores to prioritize");
  if (!(beta > 0.0)) throw Error(ErrorKind::InvalidArgument, "beta must be > 0");
  for (double s : scores)
    if (std::isnan(s)) throw Error(ErrorKind::NonFiniteValue, "NaN score");

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<double> weight(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    // Number of strictly greater scores + 1.
    auto first = std::lower_bound(sorted.begin(), sorted.end(), scores[i], std::greater<>());
    const double rank = static_cast<double>(first - sorted.begin()) + 1.0;
    weight[i] = std::pow(1.0 / rank, beta);
    total += weight[i];
  }
  for (double& w : weight) w /= total;
  return weight;
}

// P = (1 - rho) * (alpha * P_N + (1 - alpha) * P_R) + rho * P_C.
inline std::vector<double> mix_channels(std::span<const double> p_novelty, std::span<const double> p_regret,
                                        std::span<const double> p_staleness, double alpha, double rho) {
  if (p_novelty.size() != p_regret.size() || p_regret.size() != p_staleness.size())
    throw Error(ErrorKind::DimensionMismatch, "probability channels differ in length");
  std::vector<double> out(p_novelty.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double scores = alpha * p_novelty[i] + (1.0 - alpha) * p_regret[i];
    out[i] = (1.0 - rho) * scores + rho * p_staleness[i];
  }
  return out;
}

template <typename LevelT>
std::vector<double> combined_replay_probs(std::span<const BufferEntry<LevelT>> entries, const BufferConfig& config,
                                          std::uint64_t current_episode) {
  if (entries.empty()) throw Error(ErrorKind::EmptyInput, "no buffer entries");
  const std::size_t n = entries.size();
  std::vector<double> novelty(n), regret(n), stale(n);
  double stale_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    novelty[i] = entries[i].novelty_score;
    regret[i] = entries[i].regret_score;
    const auto last = std::min(entries[i].last_replay_episode, current_episode);
    stale[i] = static_cast<double>(current_episode - last);
    stale_total += stale[i];
  }
  for (double& s : stale) s = stale_total > 0.0 ? s / stale_total : 1.0 / static_cast<double>(n);
  return mix_channels(rank_prioritized_probs(novelty, config.beta), rank_prioritized_probs(regret, config.beta),
                      stale, config.alpha, config.rho);
}

template <typename LevelT>
struct InsertResult {
  bool inserted = false;
  std::optional<BufferEntry<LevelT>> evicted;
  double candidate_probability = 1.0;
};

template <typename LevelT>
class LevelBuffer {
 public:
  using Entry = BufferEntry<LevelT>;

  explicit LevelBuffer(BufferConfig config) : config_(config) { config_.validate(); }

  const BufferConfig& config() const { return config_; }
  void set_alpha(double alpha) { config_.alpha = alpha; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::span<const Entry> entries() const { return entries_; }
  Entry& at(std::size_t i) { return entries_.at(i); }
  const Entry& at(std::size_t i) const { return entries_.at(i); }

  std::vector<double> replay_probs(std::uint64_t current_episode) const {
    return combined_replay_probs<LevelT>(entries_, config_, current_episode);
  }

  // Admits the candidate when there is room, or when its replay probability
  // over buffer + {candidate} strictly exceeds the smallest buffered one; the
  // argmin (oldest on ties) is evicted.
  InsertResult<LevelT> insert_if_better(Entry candidate, std::uint64_t current_episode) {
    InsertResult<LevelT> result;
    candidate.inserted_episode = current_episode;
    candidate.last_replay_episode = current_episode;
    if (entries_.size() < config_.capacity) {
      entries_.push_back(std::move(candidate));
      result.inserted = true;
      return result;
    }
    std::vector<Entry> pool(entries_.begin(), entries_.end());
    pool.push_back(candidate);
    const std::vector<double> p = combined_replay_probs<LevelT>(pool, config_, current_episode);
    result.candidate_probability = p.back();
    std::size_t victim = 0;
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      if (p[i] < p[victim] || (p[i] == p[victim] && entries_[i].inserted_episode < entries_[victim].inserted_episode))
        victim = i;
    }
    if (!(p.back() > p[victim])) return result;
    result.evicted = std::move(entries_[victim]);
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(victim));
    entries_.push_back(std::move(candidate));
    result.inserted = true;
    return result;
  }

  // Samples an index by replay probability and stamps it as replayed.
  std::size_t sample_replay(std::uint64_t current_episode, Rng& rng) {
    if (entries_.empty()) throw Error(ErrorKind::EmptyInput, "cannot sample from an empty buffer");
    const std::vector<double> p = replay_probs(current_episode);
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t pick = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    entries_[pick].last_replay_episode = current_episode;
    return pick;
  }

  void push_unchecked(Entry entry) { entries_.push_back(std::move(entry)); }

 private:
  BufferConfig config_;
  std::vector<Entry> entries_;
};

}  // namespace cenie::buffer
