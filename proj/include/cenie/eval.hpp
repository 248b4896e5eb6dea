#pragma once

// Zero-shot evaluation, aggregate metrics and exact state-action coverage.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cenie/rollout.hpp"

namespace cenie::eval {

struct EvalRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string level;
  int episodes = 0;
  int solved = 0;
  double solved_rate = 0.0;
  double mean_return = 0.0;
};

// Stochastic-policy episodes on each level; no learning.
inline std::vector<EvalRecord> solved_rate(const student::Policy& policy, const std::vector<maze::NamedLevel>& levels,
                                           int episodes_per_level, int max_steps, Rng& rng,
                                           student::ActionMode mode = student::ActionMode::Sample) {
  if (episodes_per_level < 1) throw Error(ErrorKind::InvalidArgument, "episodes_per_level must be >= 1");
  std::vector<const maze::Level*> batch;
  for (const auto& nl : levels)
    for (int e = 0; e < episodes_per_level; ++e) batch.push_back(&nl.level);
  const auto episodes = rollout::run_episodes(policy, batch, max_steps, 1.0, 1.0, mode, rng);
  std::vector<EvalRecord> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    EvalRecord r;
    r.level = levels[l].name;
    r.episodes = episodes_per_level;
    double ret = 0.0;
    for (int e = 0; e < episodes_per_level; ++e) {
      const auto& ep = episodes[l * static_cast<std::size_t>(episodes_per_level) + static_cast<std::size_t>(e)];
      r.solved += ep.solved;
      ret += ep.episode_return;
    }
    r.solved_rate = static_cast<double>(r.solved) / episodes_per_level;
    r.mean_return = ret / episodes_per_level;
    out.push_back(std::move(r));
  }
  return out;
}

struct IqmResult {
  double value = 0.0;
  bool plain_mean = false;  // fewer than 4 scores: no trimming was done
};

// Interquartile mean: drop floor(n/4) scores from each end, average the rest.
inline IqmResult iqm(std::vector<double> scores) {
  if (scores.empty()) throw Error(ErrorKind::EmptyInput, "iqm of no scores");
  for (double s : scores)
    if (!std::isfinite(s)) throw Error(ErrorKind::NonFiniteValue, "non-finite score");
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  if (n < 4) return {std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n), true};
  const std::size_t cut = n / 4;
  double sum = 0.0;
  for (std::size_t i = cut; i < n - cut; ++i) sum += scores[i];
  return {sum / static_cast<double>(n - 2 * cut), false};
}

// Mean shortfall below the target; scores above it contribute nothing.
inline double optimality_gap(const std::vector<double>& scores, double target = 0.95) {
  if (scores.empty()) throw Error(ErrorKind::EmptyInput, "optimality gap of no scores");
  double sum = 0.0;
  for (double s : scores) sum += std::max(0.0, target - s);
  return sum / static_cast<double>(scores.size());
}

inline double min_max_normalize(double x, double lo = 0.0, double hi = 1.0) {
  if (!(hi > lo)) throw Error(ErrorKind::InvalidArgument, "normalization range is empty");
  return (x - lo) / (hi - lo);
}

// Distinct (level, cell, orientation, action) tuples as a fraction of every
// such tuple over the cells reachable from the start of each registered level.
// Keying by level keeps the measure from saturating on the shared grid.
class CoverageTracker {
 public:
  void add_level(const maze::Level& level) {
    if (levels_.count(level.id())) return;
    std::set<int> cells;
    for (int idx : maze::reachable_cells(level)) cells.insert(idx);
    universe_ += cells.size() * maze::kNumDirs * maze::kNumActions;
    levels_.emplace(level.id(), LevelCells{level.width(), std::move(cells), {}});
  }

  // Visits on unregistered levels or unreachable cells are ignored.
  void add_visit(std::uint64_t level_id, const rollout::Visit& v) {
    auto it = levels_.find(level_id);
    if (it == levels_.end()) return;
    const int cell = v.y * it->second.width + v.x;
    if (v.x < 0 || v.x >= it->second.width || !it->second.reachable.count(cell)) return;
    if (it->second.visited.insert(cell * 16 + v.dir * 4 + v.action).second) ++visited_;
  }

  template <typename Range>
  void add_visits(std::uint64_t level_id, const Range& visits) {
    for (const auto& v : visits) add_visit(level_id, v);
  }

  std::size_t universe_size() const { return universe_; }
  std::size_t visited_count() const { return visited_; }
  std::size_t level_count() const { return levels_.size(); }

  double fraction() const {
    return universe_ == 0 ? 0.0 : static_cast<double>(visited_) / static_cast<double>(universe_);
  }

  void clear() {
    levels_.clear();
    universe_ = 0;
    visited_ = 0;
  }

 private:
  struct LevelCells {
    int width;
    std::set<int> reachable;
    std::set<int> visited;
  };
  std::map<std::uint64_t, LevelCells> levels_;
  std::size_t universe_ = 0;
  std::size_t visited_ = 0;
};

struct AlgorithmSummary {
  std::string algorithm;
  double iqm = 0.0;
  double optimality_gap = 0.0;
  double mean_solved_rate = 0.0;
  double coverage = 0.0;
  std::size_t runs = 0;
  std::size_t scores = 0;
};

inline std::string format_double(double v, int precision = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

// Two panels of horizontal bars (IQM, optimality gap), one bar per algorithm.
inline std::string render_svg(const std::vector<AlgorithmSummary>& rows) {
  const int bar_h = 22, gap = 8, label_w = 130, panel_w = 260, pad = 20;
  const int panel_h = static_cast<int>(rows.size()) * (bar_h + gap) + 30;
  const int width = pad + 2 * (label_w + panel_w + pad);
  const int height = panel_h + 2 * pad;
  static const char* kColors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const char* titles[] = {"IQM (higher is better)", "Optimality gap (lower is better)"};
  for (int panel = 0; panel < 2; ++panel) {
    const int x0 = pad + panel * (label_w + panel_w + pad);
    svg << "<text x=\"" << x0 + label_w << "\" y=\"" << pad + 12 << "\" font-weight=\"bold\">" << titles[panel]
        << "</text>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = std::clamp(panel == 0 ? rows[i].iqm : rows[i].optimality_gap, 0.0, 1.0);
      const int y = pad + 24 + static_cast<int>(i) * (bar_h + gap);
      const int w = static_cast<int>(std::lround(v * panel_w));
      svg << "<text x=\"" << x0 + label_w - 6 << "\" y=\"" << y + bar_h - 6 << "\" text-anchor=\"end\">"
          << rows[i].algorithm << "</text>\n";
      svg << "<rect x=\"" << x0 + label_w << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << bar_h
          << "\" fill=\"" << kColors[i % 6] << "\"/>\n";
      svg << "<text x=\"" << x0 + label_w + w + 4 << "\" y=\"" << y + bar_h - 6 << "\">"
          << format_double(panel == 0 ? rows[i].iqm : rows[i].optimality_gap, 3) << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

// One bar per held-out level: solved rate of a single run.
inline std::string render_levels_svg(const std::vector<EvalRecord>& records, const std::string& title) {
  const int bar_h = 20, gap = 6, label_w = 150, panel_w = 300, pad = 20;
  const int height = 2 * pad + 30 + static_cast<int>(records.size()) * (bar_h + gap);
  const int width = 2 * pad + label_w + panel_w + 50;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << pad + label_w << "\" y=\"" << pad + 12 << "\" font-weight=\"bold\">" << title << "</text>\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int y = pad + 24 + static_cast<int>(i) * (bar_h + gap);
    const int w = static_cast<int>(std::lround(std::clamp(records[i].solved_rate, 0.0, 1.0) * panel_w));
    svg << "<text x=\"" << pad + label_w - 6 << "\" y=\"" << y + bar_h - 6 << "\" text-anchor=\"end\">"
        << records[i].level << "</text>\n";
    svg << "<rect x=\"" << pad + label_w << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << bar_h
        << "\" fill=\"#4c72b0\"/>\n";
    svg << "<text x=\"" << pad + label_w + w + 4 << "\" y=\"" << y + bar_h - 6 << "\">"
        << format_double(records[i].solved_rate, 2) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace cenie::eval
