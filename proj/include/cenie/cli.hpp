#pragma once

// Subcommands of the cenie_lab tool: train, eval, report, inspect-buffer.
// Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage.

#include <CLI11.hpp>
#include <algorithm>
#include <iostream>
#include <map>

#include "cenie/config.hpp"
#include "cenie/runner.hpp"

namespace cenie::cli {

inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

struct TrainOptions {
  std::string config;
  std::string manifest;
  std::optional<std::string> algorithm;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<long> total_updates;
  std::optional<int> grid_size;
  std::string out;
  bool audit = false;
  bool verbose = false;
};

inline config::ExperimentConfig resolve(const TrainOptions& o) {
  if (o.config.empty() == o.manifest.empty())
    throw config::ConfigError("config", 0, "give exactly one of --config or --manifest");
  config::ExperimentConfig ec;
  if (!o.config.empty()) {
    ec = config::load_toml(o.config);
  } else {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(read_file(o.manifest));
    } catch (const nlohmann::json::exception& e) {
      throw config::ConfigError(o.manifest, 0, e.what());
    }
    ec = config::from_manifest(m);
  }
  if (o.algorithm) {
    // Re-derive algorithm-dependent defaults unless the file set them.
    const runner::Algorithm a = runner::parse_algorithm(*o.algorithm);
    const runner::RunConfig before = runner::RunConfig::for_algorithm(ec.run.algorithm);
    if (ec.run.buffer.replay_rate == before.buffer.replay_rate)
      ec.run.buffer.replay_rate = runner::RunConfig::for_algorithm(a).buffer.replay_rate;
    ec.run.algorithm = a;
  }
  if (o.seed) ec.run.seed = *o.seed;
  if (o.alpha) ec.run.alpha_override = *o.alpha;
  if (o.total_updates) ec.run.total_ppo_updates = *o.total_updates;
  if (o.grid_size) ec.run.env.grid_size = *o.grid_size;
  if (!o.out.empty()) ec.out = o.out;
  if (o.audit) ec.run.audit = true;
  if (o.verbose) ec.run.verbose = true;
  if (ec.out.empty()) ec.out = "runs/" + std::string(runner::to_string(ec.run.algorithm)) + "-s" + std::to_string(ec.run.seed);
  config::validate(ec);
  return ec;
}

inline int train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  config::ExperimentConfig ec;
  try {
    ec = resolve(o);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  const std::filesystem::path dir = ec.out;
  try {
    std::filesystem::create_directories(dir);
    const nlohmann::json manifest = config::manifest(ec);
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    runner::Hooks hooks;
    hooks.on_metrics = [&](const runner::MetricsRow&, const runner::RunResult& partial) {
      write_file_atomic(dir / "metrics.csv", runner::metrics_csv(partial.metrics, partial.level_names));
    };
    runner::Runner r(ec.run, hooks);
    r.checkpoint_sink_ = [&](const student::Policy& p, const student::AdamState& adam, const runner::Counters& c) {
      student::save_checkpoint(dir / "checkpoint.bin", p, &adam,
                               {{"ppo_updates", c.ppo_updates}, {"iterations", c.iterations}});
    };
    const runner::RunResult result = r.run();
    runner::Runner::write_artifacts(dir, result, manifest);
    const nlohmann::json summary = runner::Runner::eval_json(result);
    out << runner::to_string(ec.run.algorithm) << " seed " << ec.run.seed << ": " << result.counters.ppo_updates
        << " updates, " << result.counters.iterations << " iterations, held-out solved "
        << eval::format_double(summary.value("mean_solved_rate", 0.0), 3) << ", IQM "
        << eval::format_double(summary.value("iqm", 0.0), 3) << ", coverage "
        << eval::format_double(summary.value("mean_coverage_fraction", 0.0), 3) << "\n";
    out << "artifacts in " << dir.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    err << "error: run failed: " << e.what() << "\n";
    if (std::filesystem::exists(dir / "checkpoint.bin"))
      err << "last checkpoint kept at " << (dir / "checkpoint.bin").string() << "\n";
    return kFailure;
  }
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, p.string() + ": " + e.what());
  }
}

struct EvalOptions {
  std::string run;
  int episodes = 100;
  std::optional<std::uint64_t> seed;
  std::string out;
};

inline int evaluate(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  try {
    const std::filesystem::path dir = o.run;
    const config::ExperimentConfig ec = config::from_manifest(read_json(dir / "manifest.json"));
    const student::Checkpoint ck = student::load_checkpoint(dir / "checkpoint.bin");
    const std::uint64_t seed = o.seed.value_or(ec.run.seed);
    Rng rng(derive_seed(seed, 0xE7A1));
    auto records =
        eval::solved_rate(ck.policy, maze::held_out_suite(ec.run.env.grid_size), o.episodes, ec.run.env.max_steps, rng);
    for (auto& r : records) {
      r.run_id = std::string(runner::to_string(ec.run.algorithm)) + "-s" + std::to_string(ec.run.seed);
      r.seed = ec.run.seed;
    }
    const std::filesystem::path target = o.out.empty() ? dir : std::filesystem::path(o.out);
    std::filesystem::create_directories(target);
    write_file_atomic(target / "eval.csv", runner::eval_csv(records));
    write_file_atomic(target / "eval.json", runner::eval_summary(records).dump(2) + "\n");
    write_file_atomic(target / "eval.svg", eval::render_levels_svg(records, "Held-out solved rate"));
    for (const auto& r : records) out << r.level << " " << eval::format_double(r.solved_rate, 3) << "\n";
    return kOk;
  } catch (const config::ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

// Rows of a CSV file keyed by header name.
inline std::vector<std::map<std::string, std::string>> read_csv(const std::filesystem::path& p) {
  std::stringstream in(read_file(p));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Io, p.string() + ": empty file");
  const auto header = split_csv_line(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw Error(ErrorKind::Io, p.string() + ": ragged row");
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

struct PooledRun {
  std::string algorithm;
  std::vector<double> scores;
  double coverage = 0.0;
};

inline PooledRun load_run(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "eval.csv"))
    throw Error(ErrorKind::Io, "missing eval records in " + dir.string());
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw Error(ErrorKind::Io, "missing manifest in " + dir.string());
  PooledRun r;
  r.algorithm = read_json(dir / "manifest.json").at("algorithm").get<std::string>();
  const auto rows = read_csv(dir / "eval.csv");
  if (rows.empty()) throw Error(ErrorKind::Io, "missing eval records in " + dir.string());
  for (const auto& row : rows) r.scores.push_back(eval::min_max_normalize(std::stod(row.at("solved_rate"))));
  if (std::filesystem::exists(dir / "metrics.csv")) {
    const auto metrics = read_csv(dir / "metrics.csv");
    for (const auto& m : metrics) r.coverage += std::stod(m.at("coverage_fraction")) / static_cast<double>(metrics.size());
  }
  return r;
}

// Pools runs per algorithm: IQM and optimality gap over the runs x levels score matrix.
inline std::vector<eval::AlgorithmSummary> pool(const std::vector<PooledRun>& runs) {
  std::map<std::string, std::vector<const PooledRun*>> by_alg;
  for (const auto& r : runs) by_alg[r.algorithm].push_back(&r);
  std::vector<eval::AlgorithmSummary> out;
  for (const auto& [alg, group] : by_alg) {
    std::vector<double> scores;
    double coverage = 0.0;
    for (const PooledRun* r : group) {
      scores.insert(scores.end(), r->scores.begin(), r->scores.end());
      coverage += r->coverage / static_cast<double>(group.size());
    }
    eval::AlgorithmSummary s;
    s.algorithm = alg;
    s.iqm = eval::iqm(scores).value;
    s.optimality_gap = eval::optimality_gap(scores);
    double mean = 0.0;
    for (double v : scores) mean += v / static_cast<double>(scores.size());
    s.mean_solved_rate = mean;
    s.coverage = coverage;
    s.runs = group.size();
    s.scores = scores.size();
    out.push_back(s);
  }
  return out;
}

inline std::string report_csv(const std::vector<eval::AlgorithmSummary>& rows) {
  std::string out = "algorithm,runs,scores,iqm,optimality_gap,mean_solved_rate,coverage_fraction\n";
  for (const auto& s : rows)
    out += s.algorithm + "," + std::to_string(s.runs) + "," + std::to_string(s.scores) + "," +
           runner::format_full(s.iqm) + "," + runner::format_full(s.optimality_gap) + "," +
           runner::format_full(s.mean_solved_rate) + "," + runner::format_full(s.coverage) + "\n";
  return out;
}

struct ReportOptions {
  std::vector<std::string> runs;
  std::string out = "report";
};

inline int report(const ReportOptions& o, std::ostream& out, std::ostream& err) {
  try {
    std::vector<PooledRun> runs;
    for (const auto& d : o.runs) runs.push_back(load_run(d));
    const auto rows = pool(runs);
    std::filesystem::create_directories(o.out);
    write_file_atomic(std::filesystem::path(o.out) / "report.csv", report_csv(rows));
    write_file_atomic(std::filesystem::path(o.out) / "report.svg", eval::render_svg(rows));
    for (const auto& s : rows)
      out << s.algorithm << ": runs " << s.runs << ", IQM " << eval::format_double(s.iqm, 3) << ", optimality gap "
          << eval::format_double(s.optimality_gap, 3) << ", coverage " << eval::format_double(s.coverage, 3) << "\n";
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

struct InspectOptions {
  std::string run;
  std::size_t top = 10;
  std::string sort = "regret";
};

inline int inspect_buffer(const InspectOptions& o, std::ostream& out, std::ostream& err) {
  try {
    const std::filesystem::path dir = o.run;
    const config::ExperimentConfig ec = config::from_manifest(read_json(dir / "manifest.json"));
    if (!std::filesystem::exists(dir / "buffer.json")) throw Error(ErrorKind::Io, "no buffer in " + dir.string());
    const runner::Buffer b = runner::buffer_from_json(read_json(dir / "buffer.json"), ec.run.buffer);
    std::vector<std::size_t> order(b.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto key = [&](std::size_t i) {
      const auto& e = b.at(i);
      if (o.sort == "novelty") return e.novelty_score;
      if (o.sort == "low-regret") return -e.regret_score;
      return e.regret_score;
    };
    if (o.sort != "regret" && o.sort != "novelty" && o.sort != "low-regret")
      throw config::ConfigError("--sort", 0, "expected regret, low-regret or novelty");
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return key(a) > key(c); });
    const std::size_t n = std::min(o.top, order.size());
    out << b.size() << " levels in buffer, showing " << n << " by " << o.sort << "\n";
    for (std::size_t r = 0; r < n; ++r) {
      const auto& e = b.at(order[r]);
      const auto path = maze::shortest_path_length(e.level);
      out << "\n#" << r + 1 << " level " << hex64(e.level.id()) << " regret " << eval::format_double(e.regret_score, 4)
          << " novelty " << eval::format_double(e.novelty_score, 4) << " walls " << e.level.wall_count()
          << " path " << (path ? std::to_string(*path) : std::string("unsolvable")) << "\n";
      for (const auto& line : maze::to_ascii(e.level)) out << line << "\n";
    }
    return kOk;
  } catch (const config::ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Curriculum lab: regret and coverage-novelty driven maze curricula for a PPO student"};
  app.require_subcommand(1);

  TrainOptions t;
  auto* train_cmd = app.add_subcommand("train", "Run one curriculum training run");
  train_cmd->add_option("--config", t.config, "TOML experiment config");
  train_cmd->add_option("--manifest", t.manifest, "Rerun from a run manifest");
  train_cmd->add_option("--algorithm", t.algorithm, "dr, plr, plr-cenie, accel or accel-cenie");
  train_cmd->add_option("--seed", t.seed, "Run seed");
  train_cmd->add_option("--alpha", t.alpha, "Novelty weight override (1.0 replays by novelty alone)");
  train_cmd->add_option("--total-updates", t.total_updates, "PPO update budget");
  train_cmd->add_option("--grid-size", t.grid_size, "Maze side length");
  train_cmd->add_option("--out", t.out, "Output directory");
  train_cmd->add_flag("--audit", t.audit, "Check buffer and stop-gradient invariants every iteration");
  train_cmd->add_flag("--verbose", t.verbose, "Progress on stderr");

  EvalOptions e;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a run's checkpoint on the held-out suite");
  eval_cmd->add_option("--run", e.run, "Run directory")->required();
  eval_cmd->add_option("--episodes", e.episodes, "Episodes per level")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", e.seed, "Evaluation seed (default: the run seed)");
  eval_cmd->add_option("--out", e.out, "Output directory (default: the run directory)");

  ReportOptions r;
  auto* report_cmd = app.add_subcommand("report", "Pool evaluated runs per algorithm");
  report_cmd->add_option("runs", r.runs, "Run directories")->required();
  report_cmd->add_option("--out", r.out, "Output directory");

  InspectOptions i;
  auto* inspect_cmd = app.add_subcommand("inspect-buffer", "Print buffer levels as ASCII art with scores");
  inspect_cmd->add_option("run", i.run, "Run directory")->required();
  inspect_cmd->add_option("--top", i.top, "Levels to show");
  inspect_cmd->add_option("--sort", i.sort, "regret, low-regret or novelty");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  }
  if (*train_cmd) return train(t, out, err);
  if (*eval_cmd) return evaluate(e, out, err);
  if (*report_cmd) return report(r, out, err);
  return inspect_buffer(i, out, err);
}

}  // namespace cenie::cli
