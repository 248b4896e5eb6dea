#pragma once

// Outer curriculum loops: domain randomization, PLR with an optional novelty
// channel, and the editing variants. One loop serves all of them; the
// algorithm selects which branches are active.

#include <chrono>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cenie/coverage.hpp"
#include "cenie/eval.hpp"
#include "cenie/level_buffer.hpp"
#include "cenie/maze.hpp"
#include "cenie/regret.hpp"
#include "cenie/rollout.hpp"
#include "cenie/student.hpp"

namespace cenie::runner {

enum class Algorithm { Dr, Plr, PlrCenie, Accel, AccelCenie };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Dr: return "dr";
    case Algorithm::Plr: return "plr";
    case Algorithm::PlrCenie: return "plr-cenie";
    case Algorithm::Accel: return "accel";
    case Algorithm::AccelCenie: return "accel-cenie";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  for (Algorithm a : {Algorithm::Dr, Algorithm::Plr, Algorithm::PlrCenie, Algorithm::Accel, Algorithm::AccelCenie})
    if (s == to_string(a)) return a;
  throw Error(ErrorKind::Config, "unknown algorithm '" + s + "' (expected dr, plr, plr-cenie, accel, accel-cenie)");
}

inline bool uses_buffer(Algorithm a) { return a != Algorithm::Dr; }
inline bool uses_novelty(Algorithm a) { return a == Algorithm::PlrCenie || a == Algorithm::AccelCenie; }
inline bool uses_editing(Algorithm a) { return a == Algorithm::Accel || a == Algorithm::AccelCenie; }

// Which score a replayed level keeps: the one from a fresh stop-gradient
// episode after the model refit, or the one from its training rollout
// (novelty under the model before the refit).
enum class ReplayScoring { PostRefit, Training };

struct CenieConfig {
  int k_min = 6;
  int k_max = 15;
  int max_em_iterations = 100;
  double convergence_epsilon = 1e-3;
  double covariance_regularization = 1e-2;
  std::size_t window_levels = 32;
  std::size_t block_cap = 0;  // per-level feature subsample, 0 keeps everything
  int refit_every = 1;        // refit after every n-th replay; 0 never fits
  std::size_t silhouette_cap = 1000;
  ReplayScoring replay_scoring = ReplayScoring::PostRefit;

  void validate() const {
    if (k_min < 1 || k_max < k_min) throw Error(ErrorKind::Config, "need 1 <= k_min <= k_max");
    if (max_em_iterations < 1) throw Error(ErrorKind::Config, "max_em_iterations must be >= 1");
    if (!(convergence_epsilon > 0.0) || !(covariance_regularization > 0.0))
      throw Error(ErrorKind::Config, "convergence_epsilon and covariance_regularization must be > 0");
    if (window_levels < 1) throw Error(ErrorKind::Config, "window_levels must be >= 1");
    if (refit_every < 0) throw Error(ErrorKind::Config, "refit_every must be >= 0");
  }
};

struct RunConfig {
  Algorithm algorithm = Algorithm::PlrCenie;
  std::optional<double> alpha_override;  // 1.0 replays by novelty alone
  maze::EnvConfig env;
  buffer::BufferConfig buffer;
  student::PpoConfig ppo;
  std::vector<int> hidden{64, 64};
  CenieConfig cenie;
  int num_edits = 5;  // 0 turns the editor off
  long total_ppo_updates = 1000;
  long eval_interval = 50;
  int eval_episodes = 10;         // per held-out level, per metrics row
  int final_eval_episodes = 100;  // per held-out level, at the end
  long checkpoint_interval = 0;   // in PPO updates; 0 writes only the final checkpoint
  long max_iterations = 0;        // 0 means no cap
  std::uint64_t seed = 0;
  bool audit = false;
  bool verbose = false;

  // Defaults that depend on the algorithm: editing variants replay more often.
  static RunConfig for_algorithm(Algorithm a) {
    RunConfig c;
    c.algorithm = a;
    c.buffer.replay_rate = uses_editing(a) ? 0.8 : 0.5;
    return c;
  }

  double effective_alpha() const {
    if (!uses_novelty(algorithm)) return 0.0;
    return alpha_override.value_or(buffer.alpha);
  }

  void validate() const {
    env.validate();
    buffer.validate();
    ppo.validate();
    cenie.validate();
    if (alpha_override && !(*alpha_override >= 0.0 && *alpha_override <= 1.0))
      throw Error(ErrorKind::Config, "alpha must lie in [0, 1]");
    if (alpha_override && !uses_novelty(algorithm))
      throw Error(ErrorKind::Config, std::string("alpha applies only to novelty algorithms, not ") + to_string(algorithm));
    if (num_edits < 0) throw Error(ErrorKind::Config, "num_edits must be >= 0");
    if (total_ppo_updates < 1 || eval_interval < 1) throw Error(ErrorKind::Config, "total_ppo_updates and eval_interval must be >= 1");
    if (eval_episodes < 1 || final_eval_episodes < 1) throw Error(ErrorKind::Config, "evaluation episode counts must be >= 1");
    if (checkpoint_interval < 0 || max_iterations < 0) throw Error(ErrorKind::Config, "intervals must be >= 0");
    for (int h : hidden)
      if (h < 1) throw Error(ErrorKind::Config, "hidden layer widths must be >= 1");
    if (env.grid_size < 9) throw Error(ErrorKind::Config, "grid_size must be >= 9 for the held-out suite");
  }
};

struct MetricsRow {
  long iteration = 0;
  long ppo_updates = 0;
  long env_steps = 0;
  double mean_return = 0.0;
  double buffer_mean_regret = 0.0;
  double buffer_mean_novelty = 0.0;
  double buffer_total_regret = 0.0;
  double coverage_fraction = 0.0;
  std::vector<double> solved;  // one per held-out level
};

struct Counters {
  long iterations = 0;
  long ppo_updates = 0;
  long replay_branches = 0;
  long explore_branches = 0;
  long env_steps = 0;
  long scoring_steps = 0;
  long refits = 0;
  long stale_refits = 0;
  long stop_gradient_calls = 0;
  long edits = 0;
};

struct Provenance {
  long iteration = 0;
  std::string event;   // insert, evict
  std::string branch;  // seed, explore, edit
  std::uint64_t level_id = 0;
  std::optional<std::uint64_t> parent_id;
  double regret = 0.0;
  double novelty = 0.0;
};

using Buffer = buffer::LevelBuffer<maze::Level>;

struct RunResult {
  std::vector<std::string> level_names;
  std::vector<MetricsRow> metrics;
  std::vector<eval::EvalRecord> final_eval;
  std::vector<Provenance> provenance;
  std::vector<std::uint64_t> training_level_ids;
  Counters counters;
  student::Policy policy;
  student::AdamState adam;
  std::optional<Buffer> buffer;
  std::optional<coverage::CoverageModel> model;
};

struct IterationView {
  long iteration;
  bool replay;
  const Counters& counters;
  const Buffer* buffer;
  const student::Policy& policy;
  const std::optional<coverage::CoverageModel>& model;
  const coverage::CoverageWindow& window;
};

struct Hooks {
  std::function<void(const IterationView&)> after_iteration;
  std::function<void(const MetricsRow&, const RunResult&)> on_metrics;
};

inline std::string metrics_header(const std::vector<std::string>& level_names) {
  std::string h =
      "iteration,ppo_updates,env_steps,mean_return,buffer_mean_regret,buffer_mean_novelty,buffer_total_regret,"
      "coverage_fraction";
  for (const auto& n : level_names) h += ",solved_" + n;
  return h + "\n";
}

inline std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows, const std::vector<std::string>& level_names) {
  std::string out = metrics_header(level_names);
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + std::to_string(r.ppo_updates) + "," + std::to_string(r.env_steps) + "," +
           format_full(r.mean_return) + "," + format_full(r.buffer_mean_regret) + "," +
           format_full(r.buffer_mean_novelty) + "," + format_full(r.buffer_total_regret) + "," +
           format_full(r.coverage_fraction);
    for (double s : r.solved) out += "," + format_full(s);
    out += "\n";
  }
  return out;
}

inline std::string provenance_jsonl(const std::vector<Provenance>& events) {
  std::string out;
  for (const auto& e : events) {
    nlohmann::json j{{"iteration", e.iteration},  {"event", e.event},   {"branch", e.branch},
                     {"level_id", hex64(e.level_id)}, {"regret", e.regret}, {"novelty", e.novelty}};
    j["parent_id"] = e.parent_id ? nlohmann::json(hex64(*e.parent_id)) : nlohmann::json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

inline nlohmann::json buffer_json(const Buffer& b) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : b.entries()) {
    entries.push_back({{"level_id", hex64(e.level.id())},
                       {"level", maze::to_json(e.level)},
                       {"regret", e.regret_score},
                       {"novelty", e.novelty_score},
                       {"last_replay", e.last_replay_episode},
                       {"inserted", e.inserted_episode}});
  }
  return {{"capacity", b.config().capacity}, {"entries", entries}};
}

inline Buffer buffer_from_json(const nlohmann::json& j, const buffer::BufferConfig& cfg) {
  Buffer b(cfg);
  for (const auto& e : j.at("entries")) {
    b.push_unchecked({maze::level_from_json(e.at("level")), e.at("regret").get<double>(), e.at("novelty").get<double>(),
                      e.at("last_replay").get<std::uint64_t>(), e.at("inserted").get<std::uint64_t>()});
  }
  return b;
}

inline std::string eval_csv(const std::vector<eval::EvalRecord>& records) {
  std::string out = "run_id,seed,level,episodes,solved,solved_rate,mean_return\n";
  for (const auto& r : records)
    out += r.run_id + "," + std::to_string(r.seed) + "," + r.level + "," + std::to_string(r.episodes) + "," +
           std::to_string(r.solved) + "," + format_full(r.solved_rate) + "," + format_full(r.mean_return) + "\n";
  return out;
}

// Aggregate JSON over one run's held-out records: per-level stats, IQM and
// optimality gap of the min-max normalized solved rates.
inline nlohmann::json eval_summary(const std::vector<eval::EvalRecord>& records) {
  std::vector<double> scores;
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& e : records) {
    scores.push_back(eval::min_max_normalize(e.solved_rate));
    levels.push_back({{"level", e.level}, {"episodes", e.episodes}, {"solved", e.solved},
                      {"solved_rate", e.solved_rate}, {"mean_return", e.mean_return}});
  }
  nlohmann::json j{{"levels", levels}};
  if (!scores.empty()) {
    const auto q = eval::iqm(scores);
    j["iqm"] = q.value;
    j["iqm_plain_mean"] = q.plain_mean;
    j["optimality_gap"] = eval::optimality_gap(scores);
    double mean = 0.0;
    for (double s : scores) mean += s / static_cast<double>(scores.size());
    j["mean_solved_rate"] = mean;
  }
  return j;
}

// Digest of the full buffer state, used to compare buffer evolution across runs.
inline std::uint64_t buffer_digest(const Buffer& b, bool include_novelty = true) {
  Fnv1a h;
  for (const auto& e : b.entries()) {
    h.value(e.level.id());
    h.value(e.regret_score);
    if (include_novelty) h.value(e.novelty_score);
    h.value(e.last_replay_episode);
    h.value(e.inserted_episode);
  }
  return h.digest();
}

namespace detail {

enum Stream : std::uint64_t { kMain = 1, kPolicy = 2, kGmm = 3, kSubsample = 4, kEval = 5, kFinalEval = 6 };

}  // namespace detail

struct StopGradientScore {
  double regret = 0.0;
  double novelty = 0.0;
  bool fitted = false;  // false: no coverage model yet, novelty left at 0
  std::vector<coverage::Feature> features;
  int steps = 0;
};

// One episode with the current policy and no parameter update; regret is the
// positive value loss of that episode, novelty its score under the model.
inline StopGradientScore evaluate_level_stop_gradient(const student::Policy& policy, const maze::Level& level,
                                                      const coverage::CoverageModel* model, int max_steps,
                                                      double gamma, double gae_lambda, Rng& rng,
                                                      student::ActionMode mode = student::ActionMode::Sample) {
  rollout::Episode ep = rollout::run_episode(policy, level, max_steps, gamma, gae_lambda, mode, rng);
  StopGradientScore s;
  s.regret = regret::pvl_score(ep.trajectory);
  s.steps = ep.steps;
  if (model) {
    s.novelty = coverage::novelty_score(model->gmm, ep.features);
    s.fitted = true;
  }
  s.features = std::move(ep.features);
  return s;
}

class Runner {
 public:
  Runner(RunConfig cfg, Hooks hooks = {}) : cfg_(std::move(cfg)), hooks_(std::move(hooks)) {
    cfg_.validate();
    buffer::BufferConfig bc = cfg_.buffer;
    bc.alpha = cfg_.effective_alpha();
    if (uses_buffer(cfg_.algorithm)) buffer_.emplace(bc);
    suite_ = maze::held_out_suite(cfg_.env.grid_size);
    for (const auto& nl : suite_) result_.level_names.push_back(nl.name);
    student::Architecture arch;
    arch.hidden = cfg_.hidden;
    policy_ = student::Policy(arch, derive_seed(cfg_.seed, detail::kPolicy));
    rng_.seed(derive_seed(cfg_.seed, detail::kMain));
    window_ = coverage::CoverageWindow(cfg_.cenie.window_levels);
    refit_settings_.k_min = cfg_.cenie.k_min;
    refit_settings_.k_max = cfg_.cenie.k_max;
    refit_settings_.fit.max_iterations = cfg_.cenie.max_em_iterations;
    refit_settings_.fit.convergence_epsilon = cfg_.cenie.convergence_epsilon;
    refit_settings_.fit.covariance_regularization = cfg_.cenie.covariance_regularization;
    refit_settings_.select.silhouette.subsample_cap = cfg_.cenie.silhouette_cap;
    refit_settings_.select.threads = worker_threads();
  }

  const RunConfig& config() const { return cfg_; }

  RunResult run() {
    started_ = std::chrono::steady_clock::now();
    if (buffer_) seed_buffer();
    Counters& c = result_.counters;
    while (c.ppo_updates < cfg_.total_ppo_updates) {
      if (cfg_.max_iterations > 0 && c.iterations >= cfg_.max_iterations) break;
      ++c.iterations;
      const auto iteration = static_cast<std::uint64_t>(c.iterations);
      bool replay = true;
      if (cfg_.algorithm == Algorithm::Dr) {
        const maze::Level level = maze::generate_random_level(cfg_.env, rng_);
        train_on(level);
      } else {
        replay = uniform01(rng_) < buffer_->config().replay_rate;
        if (replay) replay_branch(iteration);
        else explore_branch(iteration);
      }
      if (cfg_.audit) audit();
      if (hooks_.after_iteration)
        hooks_.after_iteration({c.iterations, replay, c, buffer_ ? &*buffer_ : nullptr, policy_, model_, window_});
    }
    finish();
    return std::move(result_);
  }

  // Writes all artifacts under dir; call after run().
  static void write_artifacts(const std::filesystem::path& dir, const RunResult& r, const nlohmann::json& manifest) {
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    write_file_atomic(dir / "metrics.csv", metrics_csv(r.metrics, r.level_names));
    write_file_atomic(dir / "provenance.jsonl", provenance_jsonl(r.provenance));
    write_file_atomic(dir / "eval.csv", eval_csv(r.final_eval));
    write_file_atomic(dir / "eval.json", eval_json(r).dump(2) + "\n");
    write_file_atomic(dir / "eval.svg", eval::render_levels_svg(r.final_eval, "Held-out solved rate"));
    if (r.buffer) write_file_atomic(dir / "buffer.json", buffer_json(*r.buffer).dump() + "\n");
    if (r.model) write_file_atomic(dir / "coverage_model.json", coverage::to_json(*r.model).dump() + "\n");
    write_file_atomic(dir / "checkpoint.bin",
                      student::encode_checkpoint(r.policy, &r.adam, {{"ppo_updates", r.counters.ppo_updates},
                                                                     {"iterations", r.counters.iterations}}));
  }

  static nlohmann::json eval_json(const RunResult& r) {
    nlohmann::json j = eval_summary(r.final_eval);
    double cov = 0.0;
    for (const auto& m : r.metrics) cov += m.coverage_fraction / static_cast<double>(r.metrics.size());
    j["mean_coverage_fraction"] = r.metrics.empty() ? 0.0 : cov;
    return j;
  }

 private:
  // Stop-gradient scoring: one sampled episode, no parameter change.
  StopGradientScore score_level(const maze::Level& level) {
    const std::uint64_t before = cfg_.audit ? policy_.hash() : 0;
    StopGradientScore s = evaluate_level_stop_gradient(policy_, level, model_ ? &*model_ : nullptr, cfg_.env.max_steps,
                                                       cfg_.ppo.gamma, cfg_.ppo.gae_lambda, rng_);
    if (cfg_.audit && policy_.hash() != before)
      throw Error(ErrorKind::InvalidState, "policy parameters changed during stop-gradient scoring");
    ++result_.counters.stop_gradient_calls;
    result_.counters.scoring_steps += s.steps;
    return s;
  }

  void record(const char* event, const char* branch, const buffer::BufferEntry<maze::Level>& e,
              std::optional<std::uint64_t> parent) {
    result_.provenance.push_back({result_.counters.iterations, event, branch, e.level.id(), parent, e.regret_score,
                                  e.novelty_score});
  }

  void insert(buffer::BufferEntry<maze::Level> entry, std::uint64_t iteration, const char* branch,
              std::optional<std::uint64_t> parent) {
    auto r = buffer_->insert_if_better(std::move(entry), iteration);
    if (!r.inserted) return;
    if (r.evicted) record("evict", branch, *r.evicted, std::nullopt);
    record("insert", branch, buffer_->entries().back(), parent);
  }

  void push_window(std::uint64_t level_id, const std::vector<coverage::Feature>& features) {
    Rng sub(derive_seed(derive_seed(cfg_.seed, detail::kSubsample), pushes_++));
    window_.push(level_id, coverage::subsample(features, cfg_.cenie.block_cap, sub));
  }

  void refit_model() {
    const std::uint64_t seed = derive_seed(derive_seed(cfg_.seed, detail::kGmm), static_cast<std::uint64_t>(result_.counters.refits));
    auto out = coverage::refit(window_, refit_settings_, seed, static_cast<std::uint64_t>(result_.counters.iterations), model_);
    ++result_.counters.refits;
    if (out.stale) ++result_.counters.stale_refits;
    model_ = std::move(out.model);
  }

  void seed_buffer() {
    const std::size_t n = buffer_->config().capacity;
    std::vector<maze::Level> levels;
    levels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) levels.push_back(maze::generate_random_level(cfg_.env, rng_));
    std::vector<const maze::Level*> ptrs;
    for (const auto& l : levels) ptrs.push_back(&l);
    std::vector<rollout::Episode> eps = rollout::run_episodes(policy_, ptrs, cfg_.env.max_steps, cfg_.ppo.gamma,
                                                              cfg_.ppo.gae_lambda, student::ActionMode::Sample, rng_);
    result_.counters.stop_gradient_calls += static_cast<long>(n);
    const bool novelty = uses_novelty(cfg_.algorithm);
    if (novelty) {
      const std::size_t first = n > window_.window_levels() ? n - window_.window_levels() : 0;
      for (std::size_t i = first; i < n; ++i) push_window(levels[i].id(), eps[i].features);
      if (cfg_.cenie.refit_every > 0) refit_model();
    }
    for (std::size_t i = 0; i < n; ++i) {
      result_.counters.scoring_steps += eps[i].steps;
      const double novelty_score = model_ ? coverage::novelty_score(model_->gmm, eps[i].features) : 0.0;
      buffer::BufferEntry<maze::Level> e{levels[i], regret::pvl_score(eps[i].trajectory), novelty_score, 0, 0};
      insert(std::move(e), 0, "seed", std::nullopt);
    }
  }

  void explore_branch(std::uint64_t iteration) {
    ++result_.counters.explore_branches;
    maze::Level level = maze::generate_random_level(cfg_.env, rng_);
    StopGradientScore s = score_level(level);
    insert({std::move(level), s.regret, s.novelty, 0, 0}, iteration, "explore", std::nullopt);
  }

  rollout::Rollout train_on(const maze::Level& level) {
    rollout::Rollout ro = rollout::collect_rollout(policy_, level, cfg_.env.max_steps, cfg_.ppo, rng_);
    student::ppo_update(policy_, adam_, ro.batch, cfg_.ppo, rng_);
    Counters& c = result_.counters;
    ++c.ppo_updates;
    c.env_steps += static_cast<long>(ro.batch.size());
    result_.training_level_ids.push_back(level.id());
    interval_cov_.add_level(level);
    interval_cov_.add_visits(level.id(), ro.visits);
    for (double r : ro.completed_returns) {
      interval_return_ += r;
      ++interval_episodes_;
    }
    if (c.ppo_updates % cfg_.eval_interval == 0) emit_metrics();
    if (cfg_.checkpoint_interval > 0 && c.ppo_updates % cfg_.checkpoint_interval == 0 && checkpoint_sink_)
      checkpoint_sink_(policy_, adam_, c);
    return ro;
  }

  void replay_branch(std::uint64_t iteration) {
    Counters& c = result_.counters;
    ++c.replay_branches;
    const std::size_t idx = buffer_->sample_replay(iteration, rng_);
    const maze::Level level = buffer_->at(idx).level;
    rollout::Rollout ro = train_on(level);

    const bool novelty = uses_novelty(cfg_.algorithm);
    double regret_score = 0.0, novelty_score = 0.0;
    if (cfg_.cenie.replay_scoring == ReplayScoring::Training) {
      regret_score = ro.mean_pvl;
      if (model_) novelty_score = coverage::novelty_score(model_->gmm, ro.features);
    }
    if (novelty) {
      push_window(level.id(), ro.features);
      ++replays_since_refit_;
      if (cfg_.cenie.refit_every > 0 && replays_since_refit_ >= cfg_.cenie.refit_every) {
        replays_since_refit_ = 0;
        refit_model();
      }
    }
    if (cfg_.cenie.replay_scoring == ReplayScoring::PostRefit) {
      StopGradientScore s = score_level(level);
      regret_score = s.regret;
      novelty_score = s.novelty;
    }
    auto& entry = buffer_->at(idx);
    entry.regret_score = regret_score;
    entry.novelty_score = novelty ? novelty_score : 0.0;

    if (uses_editing(cfg_.algorithm) && cfg_.num_edits > 0) {
      ++c.edits;
      maze::Level child = maze::edit_level(level, cfg_.num_edits, rng_);
      StopGradientScore s = score_level(child);
      insert({std::move(child), s.regret, s.novelty, 0, 0}, iteration, "edit", level.id());
    }
  }

  void emit_metrics() {
    const Counters& c = result_.counters;
    MetricsRow row;
    row.iteration = c.iterations;
    row.ppo_updates = c.ppo_updates;
    row.env_steps = c.env_steps;
    row.mean_return = interval_episodes_ > 0 ? interval_return_ / static_cast<double>(interval_episodes_) : 0.0;
    if (buffer_ && !buffer_->empty()) {
      double reg = 0.0, nov = 0.0;
      for (const auto& e : buffer_->entries()) {
        reg += e.regret_score;
        nov += e.novelty_score;
      }
      const double n = static_cast<double>(buffer_->size());
      row.buffer_total_regret = reg;
      row.buffer_mean_regret = reg / n;
      row.buffer_mean_novelty = nov / n;
    }
    row.coverage_fraction = interval_cov_.fraction();
    Rng eval_rng(derive_seed(derive_seed(cfg_.seed, detail::kEval), static_cast<std::uint64_t>(result_.metrics.size())));
    for (const auto& r : eval::solved_rate(policy_, suite_, cfg_.eval_episodes, cfg_.env.max_steps, eval_rng))
      row.solved.push_back(r.solved_rate);
    interval_cov_.clear();
    interval_return_ = 0.0;
    interval_episodes_ = 0;
    if (cfg_.verbose) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
      double mean_solved = 0.0;
      for (double s : row.solved) mean_solved += s / static_cast<double>(row.solved.size());
      std::cerr << "[" << to_string(cfg_.algorithm) << " seed " << cfg_.seed << "] updates " << row.ppo_updates
                << " iter " << row.iteration << " return " << eval::format_double(row.mean_return, 3) << " coverage "
                << eval::format_double(row.coverage_fraction, 3) << " held-out " << eval::format_double(mean_solved, 3)
                << " refits " << c.refits << " (" << eval::format_double(secs, 1) << "s)\n";
    }
    result_.metrics.push_back(std::move(row));
    if (hooks_.on_metrics) hooks_.on_metrics(result_.metrics.back(), result_);
  }

  void audit() const {
    if (buffer_ && buffer_->size() > buffer_->config().capacity)
      throw Error(ErrorKind::InvalidState, "buffer exceeds capacity");
    if (window_.size() > window_.window_levels()) throw Error(ErrorKind::InvalidState, "window exceeds its size");
    if (buffer_) {
      for (const auto& e : buffer_->entries()) {
        if (!std::isfinite(e.regret_score) || !std::isfinite(e.novelty_score))
          throw Error(ErrorKind::InvalidState, "non-finite buffer score");
        if (e.last_replay_episode > static_cast<std::uint64_t>(result_.counters.iterations))
          throw Error(ErrorKind::InvalidState, "replay timestamp in the future");
      }
    }
  }

  void finish() {
    Rng eval_rng(derive_seed(cfg_.seed, detail::kFinalEval));
    result_.final_eval = eval::solved_rate(policy_, suite_, cfg_.final_eval_episodes, cfg_.env.max_steps, eval_rng);
    for (auto& r : result_.final_eval) {
      r.run_id = std::string(to_string(cfg_.algorithm)) + "-s" + std::to_string(cfg_.seed);
      r.seed = cfg_.seed;
    }
    result_.policy = policy_;
    result_.adam = adam_;
    result_.buffer = buffer_;
    result_.model = model_;
  }

 public:
  // Called every checkpoint_interval PPO updates with the live learner state.
  std::function<void(const student::Policy&, const student::AdamState&, const Counters&)> checkpoint_sink_;

 private:
  RunConfig cfg_;
  Hooks hooks_;
  RunResult result_;
  std::vector<maze::NamedLevel> suite_;
  student::Policy policy_;
  student::AdamState adam_;
  Rng rng_;
  std::optional<Buffer> buffer_;
  coverage::CoverageWindow window_{32};
  std::optional<coverage::CoverageModel> model_;
  coverage::RefitSettings refit_settings_;
  eval::CoverageTracker interval_cov_;
  double interval_return_ = 0.0;
  long interval_episodes_ = 0;
  int replays_since_refit_ = 0;
  std::uint64_t pushes_ = 0;
  std::chrono::steady_clock::time_point started_;
};

inline RunResult run(const RunConfig& cfg, Hooks hooks = {}) { return Runner(cfg, std::move(hooks)).run(); }

}  // namespace cenie::runner
