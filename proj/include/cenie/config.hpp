#pragma once

// Experiment configuration: TOML files with strict key checking, JSON for
// run manifests. Both go through one tree walker so a manifest reproduces the
// exact resolved config.

#include <map>
#include <set>
#include <string>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "cenie/runner.hpp"

namespace cenie::config {

// A config problem tied to a key; line is 0 when unknown (JSON manifests).
class ConfigError : public Error {
 public:
  ConfigError(std::string key, std::size_t line, const std::string& what)
      : Error(ErrorKind::Config, describe(key, line, what)), key_(std::move(key)), line_(line) {}
  const std::string& key() const noexcept { return key_; }
  std::size_t line() const noexcept { return line_; }

 private:
  static std::string describe(const std::string& key, std::size_t line, const std::string& what) {
    std::string s = "'" + key + "'";
    if (line > 0) s += " (line " + std::to_string(line) + ")";
    return s + ": " + what;
  }
  std::string key_;
  std::size_t line_;
};

struct ExperimentConfig {
  runner::RunConfig run;
  std::string out;  // empty: runs/<algorithm>-s<seed>
};

using Lines = std::map<std::string, std::size_t>;

namespace detail {

inline nlohmann::json from_toml(const toml::node& node, const std::string& path, Lines& lines) {
  if (node.source().begin.line > 0) lines[path] = node.source().begin.line;
  if (const auto* t = node.as_table()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : *t) {
      const std::string key(k.str());
      const std::string child = path.empty() ? key : path + "." + key;
      if (k.source().begin.line > 0) lines[child] = k.source().begin.line;
      j[key] = from_toml(v, child, lines);
      if (k.source().begin.line > 0) lines[child] = k.source().begin.line;
    }
    return j;
  }
  if (const auto* a = node.as_array()) {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t i = 0; i < a->size(); ++i) j.push_back(from_toml(*a->get(i), path, lines));
    return j;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  throw ConfigError(path, node.source().begin.line, "unsupported value type");
}

// Reads one table, rejecting keys it does not consume.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path, const Lines& lines) : j_(j), path_(std::move(path)), lines_(lines) {
    if (!j_.is_object()) fail(path_, "expected a table");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const nlohmann::json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<std::int64_t>() < 0) throw std::invalid_argument("expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      fail(full(key), e.what());
    }
  }

  void get_int_list(const std::string& key, std::vector<int>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) fail(full(key), "expected a list of integers");
    std::vector<int> list;
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(full(key), "expected a list of integers");
      list.push_back(e.get<int>());
    }
    out = std::move(list);
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::optional<Reader> table(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Reader(j_.at(key), full(key), lines_);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(full(k), "unknown key");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    auto it = lines_.find(key);
    throw ConfigError(key, it == lines_.end() ? 0 : it->second, what);
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  const Lines& lines_;
  std::set<std::string> seen_;
};

inline runner::ReplayScoring parse_scoring(const std::string& s, const Reader& r) {
  if (s == "post-refit") return runner::ReplayScoring::PostRefit;
  if (s == "training") return runner::ReplayScoring::Training;
  r.fail(r.full("replay_scoring"), "expected post-refit or training");
}

inline const char* to_string(runner::ReplayScoring s) {
  return s == runner::ReplayScoring::PostRefit ? "post-refit" : "training";
}

}  // namespace detail

// Builds a config from a parsed tree. Defaults that depend on the algorithm
// are applied before the tree overrides them.
inline ExperimentConfig from_tree(const nlohmann::json& j, const Lines& lines = {}) {
  detail::Reader root(j, "", lines);
  std::string algorithm = "plr-cenie";
  root.get("algorithm", algorithm);
  runner::Algorithm alg;
  try {
    alg = runner::parse_algorithm(algorithm);
  } catch (const Error& e) {
    root.fail("algorithm", e.what());
  }
  ExperimentConfig ec;
  runner::RunConfig& c = ec.run;
  c = runner::RunConfig::for_algorithm(alg);
  root.get("seed", c.seed);
  root.get("total_ppo_updates", c.total_ppo_updates);
  root.get("eval_interval", c.eval_interval);
  root.get("eval_episodes", c.eval_episodes);
  root.get("final_eval_episodes", c.final_eval_episodes);
  root.get("checkpoint_interval", c.checkpoint_interval);
  root.get("max_iterations", c.max_iterations);
  root.get("audit", c.audit);
  root.get("verbose", c.verbose);
  root.get("out", ec.out);
  if (root.has("alpha")) {
    double a = 0.0;
    root.get("alpha", a);
    c.alpha_override = a;
  }
  if (auto t = root.table("env")) {
    t->get("grid_size", c.env.grid_size);
    t->get("min_walls", c.env.min_walls);
    t->get("max_walls", c.env.max_walls);
    t->get("max_steps", c.env.max_steps);
    t->finish();
  }
  if (auto t = root.table("buffer")) {
    t->get("capacity", c.buffer.capacity);
    t->get("beta", c.buffer.beta);
    t->get("rho", c.buffer.rho);
    t->get("alpha", c.buffer.alpha);
    t->get("replay_rate", c.buffer.replay_rate);
    t->finish();
  }
  if (auto t = root.table("ppo")) {
    auto& p = c.ppo;
    t->get("gamma", p.gamma);
    t->get("gae_lambda", p.gae_lambda);
    t->get("rollout_length", p.rollout_length);
    t->get("epochs", p.epochs);
    t->get("minibatches", p.minibatches);
    t->get("clip", p.clip);
    t->get("workers", p.workers);
    t->get("learning_rate", p.learning_rate);
    t->get("adam_epsilon", p.adam_epsilon);
    t->get("max_grad_norm", p.max_grad_norm);
    t->get("value_clipping", p.value_clipping);
    t->get("value_loss_coef", p.value_loss_coef);
    t->get("entropy_coef", p.entropy_coef);
    t->get("normalize_advantages", p.normalize_advantages);
    t->get_int_list("hidden", c.hidden);
    t->finish();
  }
  if (auto t = root.table("cenie")) {
    auto& g = c.cenie;
    t->get("k_min", g.k_min);
    t->get("k_max", g.k_max);
    t->get("max_em_iterations", g.max_em_iterations);
    t->get("convergence_epsilon", g.convergence_epsilon);
    t->get("covariance_regularization", g.covariance_regularization);
    t->get("window_levels", g.window_levels);
    t->get("block_cap", g.block_cap);
    t->get("refit_every", g.refit_every);
    t->get("silhouette_cap", g.silhouette_cap);
    std::string scoring = detail::to_string(g.replay_scoring);
    t->get("replay_scoring", scoring);
    g.replay_scoring = detail::parse_scoring(scoring, *t);
    t->finish();
  }
  if (auto t = root.table("accel")) {
    if (!runner::uses_editing(alg)) root.fail("accel", "edit settings apply only to accel and accel-cenie");
    t->get("num_edits", c.num_edits);
    t->finish();
  }
  root.finish();
  return ec;
}

inline void validate(const ExperimentConfig& ec) {
  try {
    ec.run.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config", 0, e.what());
  }
}

inline ExperimentConfig parse_toml(std::string_view text, const std::string& source = "config") {
  toml::table table;
  try {
    table = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    throw ConfigError(source, e.source().begin.line, std::string(e.description()));
  }
  Lines lines;
  const nlohmann::json j = detail::from_toml(table, "", lines);
  return from_tree(j, lines);
}

inline ExperimentConfig load_toml(const std::filesystem::path& path) {
  return parse_toml(read_file(path), path.string());
}

// The full resolved config, in the same shape the loader accepts.
inline nlohmann::json to_json(const ExperimentConfig& ec) {
  const runner::RunConfig& c = ec.run;
  nlohmann::json j{
      {"algorithm", runner::to_string(c.algorithm)},
      {"seed", c.seed},
      {"total_ppo_updates", c.total_ppo_updates},
      {"eval_interval", c.eval_interval},
      {"eval_episodes", c.eval_episodes},
      {"final_eval_episodes", c.final_eval_episodes},
      {"checkpoint_interval", c.checkpoint_interval},
      {"max_iterations", c.max_iterations},
      {"audit", c.audit},
      {"env",
       {{"grid_size", c.env.grid_size},
        {"min_walls", c.env.min_walls},
        {"max_walls", c.env.max_walls},
        {"max_steps", c.env.max_steps}}},
      {"buffer",
       {{"capacity", c.buffer.capacity},
        {"beta", c.buffer.beta},
        {"rho", c.buffer.rho},
        {"alpha", c.buffer.alpha},
        {"replay_rate", c.buffer.replay_rate}}},
      {"ppo",
       {{"gamma", c.ppo.gamma},
        {"gae_lambda", c.ppo.gae_lambda},
        {"rollout_length", c.ppo.rollout_length},
        {"epochs", c.ppo.epochs},
        {"minibatches", c.ppo.minibatches},
        {"clip", c.ppo.clip},
        {"workers", c.ppo.workers},
        {"learning_rate", c.ppo.learning_rate},
        {"adam_epsilon", c.ppo.adam_epsilon},
        {"max_grad_norm", c.ppo.max_grad_norm},
        {"value_clipping", c.ppo.value_clipping},
        {"value_loss_coef", c.ppo.value_loss_coef},
        {"entropy_coef", c.ppo.entropy_coef},
        {"normalize_advantages", c.ppo.normalize_advantages},
        {"hidden", c.hidden}}},
      {"cenie",
       {{"k_min", c.cenie.k_min},
        {"k_max", c.cenie.k_max},
        {"max_em_iterations", c.cenie.max_em_iterations},
        {"convergence_epsilon", c.cenie.convergence_epsilon},
        {"covariance_regularization", c.cenie.covariance_regularization},
        {"window_levels", c.cenie.window_levels},
        {"block_cap", c.cenie.block_cap},
        {"refit_every", c.cenie.refit_every},
        {"silhouette_cap", c.cenie.silhouette_cap},
        {"replay_scoring", detail::to_string(c.cenie.replay_scoring)}}},
  };
  if (c.alpha_override) j["alpha"] = *c.alpha_override;
  if (runner::uses_editing(c.algorithm)) j["accel"] = {{"num_edits", c.num_edits}};
  if (!ec.out.empty()) j["out"] = ec.out;
  return j;
}

inline nlohmann::json manifest(const ExperimentConfig& ec) {
  return {{"tool", "cenie_lab"},
          {"format", 1},
          {"algorithm", runner::to_string(ec.run.algorithm)},
          {"seed", ec.run.seed},
          {"config", to_json(ec)}};
}

inline ExperimentConfig from_manifest(const nlohmann::json& m) {
  if (!m.contains("config")) throw ConfigError("config", 0, "manifest has no config section");
  return from_tree(m.at("config"));
}

}  // namespace cenie::config
