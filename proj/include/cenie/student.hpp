#pragma once

// Feedforward actor-critic trained with clipped PPO. A shared tanh trunk feeds
// one linear head producing the action logits and the state value; gradients
// are computed by hand.

#include <Eigen/Dense>
#include <bit>
#include <cstring>
#include <optional>
#include <vector>

#include "cenie/common.hpp"
#include "cenie/maze.hpp"
#include "json.hpp"

namespace cenie::student {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Architecture {
  int inputs = maze::kObsSize;
  std::vector<int> hidden{64, 64};
  int actions = maze::kNumActions;

  int outputs() const { return actions + 1; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    int in = inputs;
    for (int h : hidden) {
      n += static_cast<std::size_t>(h) * static_cast<std::size_t>(in + 1);
      in = h;
    }
    return n + static_cast<std::size_t>(outputs()) * static_cast<std::size_t>(in + 1);
  }

  void validate() const {
    if (inputs < 1 || actions < 1) throw Error(ErrorKind::InvalidArgument, "network needs inputs and actions");
    for (int h : hidden)
      if (h < 1) throw Error(ErrorKind::InvalidArgument, "hidden layer widths must be >= 1");
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct ForwardPass {
  std::vector<Matrix> activations;  // input, then each hidden layer output
  Matrix logits;                    // batch x actions
  Vector values;
};

class Policy {
 public:
  Policy() = default;

  // Hidden weights ~ N(0, 1/fan_in), biases 0; the output head starts at zero,
  // so the initial policy is uniform with value 0.
  Policy(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    params_ = Vector::Zero(static_cast<Eigen::Index>(arch_.parameter_count()));
    Rng rng(seed);
    std::normal_distribution<double> z;
    Eigen::Index offset = 0;
    int in = arch_.inputs;
    for (int h : arch_.hidden) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(in));
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(h) * in; ++i) params_(offset + i) = scale * z(rng);
      offset += static_cast<Eigen::Index>(h) * (in + 1);
      in = h;
    }
  }

  Policy(Architecture arch, Vector params) : arch_(std::move(arch)), params_(std::move(params)) {
    arch_.validate();
    if (params_.size() != static_cast<Eigen::Index>(arch_.parameter_count()))
      throw Error(ErrorKind::DimensionMismatch, "parameter vector does not match the architecture");
  }

  const Architecture& architecture() const { return arch_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  std::uint64_t hash() const {
    Fnv1a h;
    h.bytes(params_.data(), static_cast<std::size_t>(params_.size()) * sizeof(double));
    return h.digest();
  }

  // Weight matrix (out x in) and bias of layer l; layer hidden.size() is the head.
  Eigen::Map<const Matrix> weight(std::size_t l) const {
    auto [off, out, in] = layout(l);
    return Eigen::Map<const Matrix>(params_.data() + off, out, in);
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    auto [off, out, in] = layout(l);
    return Eigen::Map<const Vector>(params_.data() + off + out * in, out);
  }

  ForwardPass forward(const Matrix& x) const {
    if (x.cols() != arch_.inputs) throw Error(ErrorKind::DimensionMismatch, "observation width mismatch");
    ForwardPass fp;
    fp.activations.reserve(arch_.hidden.size() + 1);
    fp.activations.push_back(x);
    for (std::size_t l = 0; l < arch_.hidden.size(); ++l) {
      Matrix z = fp.activations.back() * weight(l).transpose();
      z.rowwise() += bias(l).transpose();
      fp.activations.push_back(z.array().tanh().matrix());
    }
    const std::size_t head = arch_.hidden.size();
    Matrix out = fp.activations.back() * weight(head).transpose();
    out.rowwise() += bias(head).transpose();
    fp.logits = out.leftCols(arch_.actions);
    fp.values = out.col(arch_.actions);
    return fp;
  }

  // Accumulates parameter gradients given d(loss)/d(logits) and d(loss)/d(values).
  void backward(const ForwardPass& fp, const Matrix& d_logits, const Vector& d_values, Vector& grad) const {
    grad.setZero(params_.size());
    Matrix d_out(d_logits.rows(), arch_.outputs());
    d_out.leftCols(arch_.actions) = d_logits;
    d_out.col(arch_.actions) = d_values;
    Matrix delta = d_out;
    for (std::size_t l = arch_.hidden.size() + 1; l-- > 0;) {
      auto [off, out, in] = layout(l);
      const Matrix& input = fp.activations[l];
      Eigen::Map<Matrix>(grad.data() + off, out, in).noalias() = delta.transpose() * input;
      Eigen::Map<Vector>(grad.data() + off + out * in, out) = delta.colwise().sum().transpose();
      if (l == 0) break;
      Matrix d_in = delta * weight(l);
      delta = d_in.array() * (1.0 - input.array().square());
    }
  }

 private:
  struct Layout {
    Eigen::Index offset, out, in;
  };
  Layout layout(std::size_t l) const {
    Eigen::Index off = 0;
    int in = arch_.inputs;
    for (std::size_t i = 0; i < arch_.hidden.size(); ++i) {
      const int out = arch_.hidden[i];
      if (i == l) return {off, out, in};
      off += static_cast<Eigen::Index>(out) * (in + 1);
      in = out;
    }
    if (l != arch_.hidden.size()) throw Error(ErrorKind::InvalidArgument, "layer index out of range");
    return {off, arch_.outputs(), in};
  }

  Architecture arch_;
  Vector params_;
};

inline Vector row_log_softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  const double peak = logits.maxCoeff();
  const double lse = peak + std::log((logits.array() - peak).exp().sum());
  return (logits.array() - lse).transpose();
}

inline Matrix log_softmax(const Matrix& logits) {
  Vector peak = logits.rowwise().maxCoeff();
  Matrix shifted = logits.colwise() - peak;
  Vector lse = shifted.array().exp().rowwise().sum().log().matrix() + peak;
  return logits.colwise() - lse;
}

enum class ActionMode { Sample, Greedy };

// Inverse-CDF draw from softmax(logits); greedy picks the first maximal logit.
inline int select_action(const Eigen::Ref<const Eigen::RowVectorXd>& logits, ActionMode mode, Rng& rng) {
  if (mode == ActionMode::Greedy) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }
  const Vector logp = row_log_softmax(logits);
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Eigen::Index a = 0; a < logp.size(); ++a) {
    acc += std::exp(logp(a));
    if (u < acc) return static_cast<int>(a);
  }
  return static_cast<int>(logp.size() - 1);
}

struct PpoConfig {
  double gamma = 0.995;
  double gae_lambda = 0.95;
  int rollout_length = 256;
  int epochs = 5;
  int minibatches = 1;
  double clip = 0.2;
  int workers = 8;
  double learning_rate = 1e-4;
  double adam_epsilon = 1e-5;
  double max_grad_norm = 0.5;
  bool value_clipping = true;
  double value_loss_coef = 0.5;
  double entropy_coef = 0.0;
  bool normalize_advantages = true;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0))
      throw Error(ErrorKind::InvalidArgument, "gamma and gae_lambda must lie in [0, 1]");
    if (rollout_length < 1 || epochs < 1 || minibatches < 1 || workers < 1)
      throw Error(ErrorKind::InvalidArgument, "rollout_length, epochs, minibatches and workers must be >= 1");
    if (!(clip > 0.0 && clip < 1.0)) throw Error(ErrorKind::InvalidArgument, "clip must lie in (0, 1)");
    if (!(learning_rate >= 0.0) || !(adam_epsilon > 0.0) || !(max_grad_norm > 0.0))
      throw Error(ErrorKind::InvalidArgument, "learning_rate >= 0, adam_epsilon > 0 and max_grad_norm > 0 required");
    if (!(value_loss_coef >= 0.0) || !(entropy_coef >= 0.0))
      throw Error(ErrorKind::InvalidArgument, "loss coefficients must be >= 0");
  }
};

struct Batch {
  Matrix observations;
  std::vector<int> actions;
  Vector old_log_probs;
  Vector old_values;
  Vector advantages;
  Vector returns;

  Eigen::Index size() const { return observations.rows(); }

  Batch subset(const std::vector<Eigen::Index>& rows) const {
    Batch b;
    const auto n = static_cast<Eigen::Index>(rows.size());
    b.observations.resize(n, observations.cols());
    b.actions.resize(rows.size());
    b.old_log_probs.resize(n);
    b.old_values.resize(n);
    b.advantages.resize(n);
    b.returns.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index r = rows[static_cast<std::size_t>(i)];
      b.observations.row(i) = observations.row(r);
      b.actions[static_cast<std::size_t>(i)] = actions[static_cast<std::size_t>(r)];
      b.old_log_probs(i) = old_log_probs(r);
      b.old_values(i) = old_values(r);
      b.advantages(i) = advantages(r);
      b.returns(i) = returns(r);
    }
    return b;
  }
};

struct LossTerms {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double max_ratio_deviation = 0.0;  // max |ratio - 1|
};

// Total loss = policy surrogate + value_loss_coef * value loss - entropy_coef * entropy,
// each a batch mean. Advantages are used as given. When grad is non-null it
// receives d(total)/d(params).
inline LossTerms ppo_loss(const Policy& policy, const Batch& batch, const PpoConfig& cfg, Vector* grad = nullptr) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw Error(ErrorKind::EmptyInput, "empty PPO batch");
  const int na = policy.architecture().actions;
  const ForwardPass fp = policy.forward(batch.observations);
  const Matrix logp = log_softmax(fp.logits);
  const Matrix probs = logp.array().exp();
  const double inv_n = 1.0 / static_cast<double>(n);

  LossTerms t;
  Matrix d_logits = Matrix::Zero(n, na);
  Vector d_values = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = batch.actions[static_cast<std::size_t>(i)];
    const double lp = logp(i, a);
    const double log_ratio = lp - batch.old_log_probs(i);
    const double ratio = std::exp(log_ratio);
    const double adv = batch.advantages(i);
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const double surr1 = ratio * adv, surr2 = clipped * adv;
    t.policy -= std::min(surr1, surr2) * inv_n;
    t.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
    t.max_ratio_deviation = std::max(t.max_ratio_deviation, std::abs(ratio - 1.0));
    const bool ratio_clipped = ratio < 1.0 - cfg.clip || ratio > 1.0 + cfg.clip;
    if (ratio_clipped) t.clip_fraction += inv_n;
    // d(-min(surr1, surr2))/d(logp): the clipped branch is flat outside the band.
    double d_lp = 0.0;
    if (surr1 <= surr2 || !ratio_clipped) d_lp = -adv * ratio * inv_n;

    double ent = 0.0;
    for (int j = 0; j < na; ++j) ent -= probs(i, j) * logp(i, j);
    t.entropy += ent * inv_n;
    for (int j = 0; j < na; ++j) {
      const double onehot = j == a ? 1.0 : 0.0;
      d_logits(i, j) = d_lp * (onehot - probs(i, j));
      // d(-coef * H)/d(logit_j) = coef * p_j (log p_j + H)
      d_logits(i, j) += cfg.entropy_coef * inv_n * probs(i, j) * (logp(i, j) + ent);
    }

    const double v = fp.values(i);
    const double target = batch.returns(i);
    const double err = v - target;
    double d_v = err;
    double sq = err * err;
    if (cfg.value_clipping) {
      const double delta = std::clamp(v - batch.old_values(i), -cfg.clip, cfg.clip);
      const double err_clipped = batch.old_values(i) + delta - target;
      const double sq_clipped = err_clipped * err_clipped;
      if (sq_clipped > sq) {
        sq = sq_clipped;
        const bool inside = v - batch.old_values(i) > -cfg.clip && v - batch.old_values(i) < cfg.clip;
        d_v = inside ? err_clipped : 0.0;
      }
    }
    t.value += 0.5 * sq * inv_n;
    d_values(i) = cfg.value_loss_coef * d_v * inv_n;
  }
  t.total = t.policy + cfg.value_loss_coef * t.value - cfg.entropy_coef * t.entropy;
  if (!std::isfinite(t.total))
    throw Error(ErrorKind::NonFiniteValue, "PPO loss is not finite (policy=" + std::to_string(t.policy) +
                                               " value=" + std::to_string(t.value) + ")");
  if (grad) policy.backward(fp, d_logits, d_values, *grad);
  return t;
}

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t steps = 0;

  void resize(Eigen::Index n) {
    if (m.size() != n) {
      m = Vector::Zero(n);
      v = Vector::Zero(n);
      steps = 0;
    }
  }
};

// Rescales grad in place so its L2 norm is at most max_norm; returns the pre-clip norm.
inline double clip_grad_norm(Vector& grad, double max_norm) {
  const double norm = grad.norm();
  const double coef = max_norm / (norm + 1e-6);
  if (coef < 1.0) grad *= coef;
  return norm;
}

inline void adam_step(Vector& params, const Vector& grad, AdamState& state, double lr, double eps,
                      double beta1 = 0.9, double beta2 = 0.999) {
  state.resize(params.size());
  state.steps += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
  const double step = lr / bc1;
  params.array() -= step * state.m.array() / ((state.v.array() / bc2).sqrt() + eps);
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;           // mean pre-clip norm
  double max_clipped_norm = 0.0;    // largest post-clip norm
  double first_ratio_deviation = 0.0;  // max |ratio - 1| on the first minibatch
  int gradient_steps = 0;
};

inline void normalize_advantages(Batch& batch) {
  const double mean = batch.advantages.mean();
  const double var = (batch.advantages.array() - mean).square().mean();
  batch.advantages = ((batch.advantages.array() - mean) / (std::sqrt(var) + 1e-8)).matrix();
}

// Epochs x minibatches of clipped PPO with global-norm clipping and Adam.
inline UpdateStats ppo_update(Policy& policy, AdamState& adam, Batch batch, const PpoConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.normalize_advantages) normalize_advantages(batch);
  const Eigen::Index n = batch.size();
  const int mb = static_cast<int>(std::min<Eigen::Index>(cfg.minibatches, n));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  UpdateStats stats;
  Vector grad;
  double norm_sum = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (mb > 1) std::shuffle(order.begin(), order.end(), rng);
    for (int m = 0; m < mb; ++m) {
      const Eigen::Index lo = n * m / mb, hi = n * (m + 1) / mb;
      const Batch part = mb == 1 ? Batch{} : batch.subset({order.begin() + lo, order.begin() + hi});
      const Batch& use = mb == 1 ? batch : part;
      LossTerms t = ppo_loss(policy, use, cfg, &grad);
      if (stats.gradient_steps == 0) stats.first_ratio_deviation = t.max_ratio_deviation;
      const double norm = clip_grad_norm(grad, cfg.max_grad_norm);
      norm_sum += norm;
      stats.max_clipped_norm = std::max(stats.max_clipped_norm, grad.norm());
      adam_step(policy.params(), grad, adam, cfg.learning_rate, cfg.adam_epsilon);
      stats.policy_loss += t.policy;
      stats.value_loss += t.value;
      stats.entropy += t.entropy;
      stats.approx_kl += t.approx_kl;
      stats.clip_fraction += t.clip_fraction;
      ++stats.gradient_steps;
    }
  }
  const double k = static_cast<double>(stats.gradient_steps);
  stats.policy_loss /= k;
  stats.value_loss /= k;
  stats.entropy /= k;
  stats.approx_kl /= k;
  stats.clip_fraction /= k;
  stats.grad_norm = norm_sum / k;
  return stats;
}

inline nlohmann::json to_json(const Architecture& a) {
  return {{"inputs", a.inputs}, {"hidden", a.hidden}, {"actions", a.actions}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.inputs = j.at("inputs").get<int>();
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.actions = j.at("actions").get<int>();
  a.validate();
  return a;
}

// Checkpoint layout: "CENIECK1", u64 header length, JSON header, then the
// parameters (and Adam moments when present) as little-endian float64.
inline constexpr char kCheckpointMagic[8] = {'C', 'E', 'N', 'I', 'E', 'C', 'K', '1'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

inline void put_doubles(std::string& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(v(i)));
}

inline Vector get_doubles(std::string_view in, std::size_t at, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = std::bit_cast<double>(get_u64(in, at + 8 * static_cast<std::size_t>(i)));
  return v;
}

}  // namespace detail

struct Checkpoint {
  Policy policy;
  std::optional<AdamState> adam;
  nlohmann::json header;
};

inline std::string encode_checkpoint(const Policy& policy, const AdamState* adam, nlohmann::json header) {
  header["architecture"] = to_json(policy.architecture());
  header["parameter_count"] = policy.params().size();
  header["adam_steps"] = adam ? nlohmann::json(adam->steps) : nlohmann::json(nullptr);
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u64(out, text.size());
  out += text;
  detail::put_doubles(out, policy.params());
  if (adam) {
    detail::put_doubles(out, adam->m);
    detail::put_doubles(out, adam->v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw Error(ErrorKind::Io, "not a checkpoint (bad magic)");
  const std::uint64_t len = detail::get_u64(bytes, 8);
  if (bytes.size() < 16 + len) throw Error(ErrorKind::Io, "truncated checkpoint header");
  Checkpoint ck;
  ck.header = nlohmann::json::parse(bytes.substr(16, len));
  Architecture arch = architecture_from_json(ck.header.at("architecture"));
  const auto n = static_cast<Eigen::Index>(arch.parameter_count());
  const bool has_adam = !ck.header.at("adam_steps").is_null();
  const std::size_t need = 16 + len + 8 * static_cast<std::size_t>(n) * (has_adam ? 3 : 1);
  if (bytes.size() != need) throw Error(ErrorKind::Io, "checkpoint blob has the wrong size");
  std::size_t at = 16 + len;
  ck.policy = Policy(arch, detail::get_doubles(bytes, at, n));
  if (has_adam) {
    AdamState a;
    at += 8 * static_cast<std::size_t>(n);
    a.m = detail::get_doubles(bytes, at, n);
    at += 8 * static_cast<std::size_t>(n);
    a.v = detail::get_doubles(bytes, at, n);
    a.steps = ck.header.at("adam_steps").get<std::int64_t>();
    ck.adam = std::move(a);
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Policy& policy, const AdamState* adam,
                            nlohmann::json header = nlohmann::json::object()) {
  write_file_atomic(path, encode_checkpoint(policy, adam, std::move(header)));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace cenie::student
