#pragma once

// State-action coverage: engineered features, the FIFO window of recent
// levels' features, refitting the mixture model and novelty scoring.

#include <array>
#include <deque>
#include <optional>
#include <vector>

#include "cenie/gmm.hpp"
#include "cenie/maze.hpp"

namespace cenie::coverage {

// x/width, y/height, orientation one-hot (4), action one-hot (3),
// wall density of the forward view, goal distance (1 when not visible).
inline constexpr int kFeatureDim = 11;
using Feature = std::array<double, kFeatureDim>;

// Largest Manhattan distance from the agent to a view cell (5 ahead, 2 across).
inline constexpr double kViewReach = 7.0;

inline Feature encode_state_action(const maze::MazeState& state, maze::Action action) {
  const maze::Level& level = *state.level;
  const maze::Pose pose = state.pose;
  Feature f{};
  f[0] = static_cast<double>(pose.cell.x) / static_cast<double>(level.width());
  f[1] = static_cast<double>(pose.cell.y) / static_cast<double>(level.height());
  f[static_cast<std::size_t>(2 + pose.dir)] = 1.0;
  f[static_cast<std::size_t>(6 + static_cast<int>(action))] = 1.0;
  int walls = 0;
  bool goal_visible = false;
  for (int r = 0; r < maze::kView; ++r)
    for (int c = 0; c < maze::kView; ++c) {
      const maze::CellKind k = level.kind(maze::view_cell(pose, r, c));
      walls += k == maze::CellKind::Wall;
      goal_visible = goal_visible || k == maze::CellKind::Goal;
    }
  f[9] = static_cast<double>(walls) / static_cast<double>(maze::kViewCells);
  f[10] = goal_visible ? static_cast<double>(maze::manhattan(pose.cell, level.goal())) / kViewReach : 1.0;
  return f;
}

inline gmm::Matrix to_matrix(const std::vector<Feature>& features) {
  gmm::Matrix m(static_cast<Eigen::Index>(features.size()), kFeatureDim);
  for (std::size_t i = 0; i < features.size(); ++i)
    for (int j = 0; j < kFeatureDim; ++j) m(static_cast<Eigen::Index>(i), j) = features[i][static_cast<std::size_t>(j)];
  return m;
}

// Seeded uniform subsample without replacement, original order preserved.
inline std::vector<Feature> subsample(const std::vector<Feature>& features, std::size_t cap, Rng& rng) {
  if (cap == 0 || features.size() <= cap) return features;
  std::vector<std::size_t> idx(features.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<Feature> out;
  out.reserve(cap);
  for (std::size_t i : idx) out.push_back(features[i]);
  return out;
}

struct Block {
  std::uint64_t level_id = 0;
  std::vector<Feature> features;
};

// Window measured in levels; eviction drops whole blocks, oldest first.
class CoverageWindow {
 public:
  explicit CoverageWindow(std::size_t window_levels = 32) : window_levels_(window_levels) {
    if (window_levels_ < 1) throw Error(ErrorKind::InvalidArgument, "window_levels must be >= 1");
  }

  // Returns false (and leaves the window untouched) for an empty block.
  bool push(std::uint64_t level_id, std::vector<Feature> features) {
    if (features.empty()) return false;
    samples_ += features.size();
    blocks_.push_back({level_id, std::move(features)});
    while (blocks_.size() > window_levels_) {
      samples_ -= blocks_.front().features.size();
      blocks_.pop_front();
    }
    return true;
  }

  std::size_t window_levels() const { return window_levels_; }
  std::size_t size() const { return blocks_.size(); }
  std::size_t sample_count() const { return samples_; }
  const std::deque<Block>& blocks() const { return blocks_; }

  gmm::Matrix samples() const {
    gmm::Matrix m(static_cast<Eigen::Index>(samples_), kFeatureDim);
    Eigen::Index row = 0;
    for (const auto& b : blocks_)
      for (const auto& f : b.features) {
        for (int j = 0; j < kFeatureDim; ++j) m(row, j) = f[static_cast<std::size_t>(j)];
        ++row;
      }
    return m;
  }

 private:
  std::size_t window_levels_;
  std::size_t samples_ = 0;
  std::deque<Block> blocks_;
};

struct CoverageModel {
  gmm::GmmParams gmm;
  std::size_t fitted_on_samples = 0;
  std::uint64_t fitted_at_episode = 0;
  int k = 0;
  std::optional<double> silhouette;
};

struct RefitOutcome {
  std::optional<CoverageModel> model;
  bool stale = false;  // previous model kept because the window was too small
};

struct RefitSettings {
  int k_min = 6;
  int k_max = 15;
  gmm::FitConfig fit;
  gmm::SelectOptions select;
};

inline RefitOutcome refit(const CoverageWindow& window, const RefitSettings& settings, std::uint64_t rng_seed,
                          std::uint64_t episode, const std::optional<CoverageModel>& previous = std::nullopt) {
  if (window.sample_count() < static_cast<std::size_t>(settings.k_min)) return {previous, true};
  const gmm::Matrix data = window.samples();
  gmm::ModelSelection sel =
      gmm::select_model(data, settings.k_min, settings.k_max, settings.fit, rng_seed, settings.select);
  CoverageModel model;
  model.gmm = std::move(sel.fit.params);
  model.fitted_on_samples = window.sample_count();
  model.fitted_at_episode = episode;
  model.k = sel.k;
  model.silhouette = sel.silhouette;
  return {std::move(model), false};
}

// Negative mean log-likelihood of the batch under the model; higher is more novel.
inline double novelty_score(const gmm::GmmParams& model, const gmm::Matrix& features) {
  if (features.rows() == 0) throw Error(ErrorKind::EmptyInput, "novelty of an empty feature batch");
  return -gmm::log_densities(model, features).mean();
}

inline double novelty_score(const gmm::GmmParams& model, const std::vector<Feature>& features) {
  if (features.empty()) throw Error(ErrorKind::EmptyInput, "novelty of an empty feature batch");
  if (model.dim != kFeatureDim) throw Error(ErrorKind::DimensionMismatch, "model dimension differs from features");
  return novelty_score(model, to_matrix(features));
}

inline nlohmann::json to_json(const CoverageModel& m) {
  nlohmann::json j{{"gmm", gmm::to_json(m.gmm)},
                   {"fitted_on_samples", m.fitted_on_samples},
                   {"fitted_at_episode", m.fitted_at_episode},
                   {"k", m.k}};
  j["silhouette"] = m.silhouette ? nlohmann::json(*m.silhouette) : nlohmann::json(nullptr);
  return j;
}

}  // namespace cenie::coverage
