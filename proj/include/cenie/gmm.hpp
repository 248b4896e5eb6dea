#pragma once

// Gaussian mixture fitting: kmeans++ seeding, EM with diagonal loading,
// log-space density evaluation and silhouette-based selection of the
// component count.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "cenie/common.hpp"
#include "json.hpp"

namespace cenie::gmm {

using Matrix = Eigen::MatrixXd;  // rows are samples
using Vector = Eigen::VectorXd;

struct Component {
  double weight = 0.0;
  Vector mean;
  Matrix covariance;
};

struct GmmParams {
  int dim = 0;
  std::vector<Component> components;

  std::size_t size() const { return components.size(); }
};

struct FitConfig {
  int k = 1;
  int max_iterations = 100;
  double convergence_epsilon = 1e-3;
  double covariance_regularization = 1e-2;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
    if (max_iterations < 1) throw Error(ErrorKind::InvalidArgument, "max_iterations must be >= 1");
    if (!(convergence_epsilon > 0.0))
      throw Error(ErrorKind::InvalidArgument, "convergence_epsilon must be > 0");
    if (!(covariance_regularization > 0.0))
      throw Error(ErrorKind::InvalidArgument, "covariance_regularization must be > 0");
  }
};

struct FitReport {
  GmmParams params;
  // Mean per-sample log-likelihood evaluated at the start of each EM
  // iteration. Cleared whenever a starved component is re-seeded, so the
  // recorded sequence is always one uninterrupted ascent.
  std::vector<double> log_likelihood_trace;
  double final_log_likelihood = 0.0;
  int iterations_run = 0;
  int reseeds = 0;
  bool converged = false;
};

namespace detail {

inline void check_finite(const Matrix& data) {
  if (!data.allFinite()) throw Error(ErrorKind::NonFiniteValue, "data contains NaN or infinity");
}

inline double log_two_pi() { return std::log(2.0 * std::numbers::pi); }

// Cholesky factor and log normalizer of one component, reused across samples.
struct ComponentFactor {
  Eigen::LLT<Matrix> llt;
  double log_norm = 0.0;  // -0.5 * (d log 2pi + log det)
  double log_weight = 0.0;
};

inline ComponentFactor factor(const Component& c, int dim) {
  ComponentFactor f;
  f.llt.compute(c.covariance);
  if (f.llt.info() != Eigen::Success)
    throw Error(ErrorKind::InvalidState, "covariance is not positive definite");
  const Matrix& l = f.llt.matrixLLT();
  double log_det = 0.0;
  for (int i = 0; i < dim; ++i) log_det += 2.0 * std::log(l(i, i));
  f.log_norm = -0.5 * (dim * log_two_pi() + log_det);
  f.log_weight = c.weight > 0.0 ? std::log(c.weight) : -std::numeric_limits<double>::infinity();
  return f;
}

// n x k matrix of log(alpha_i) + log N(x_t | mu_i, Sigma_i).
inline Matrix weighted_log_joint(const GmmParams& params, const Matrix& data) {
  const Eigen::Index n = data.rows();
  const Eigen::Index k = static_cast<Eigen::Index>(params.size());
  Matrix out(n, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Component& c = params.components[static_cast<std::size_t>(i)];
    ComponentFactor f = factor(c, params.dim);
    Matrix centered = (data.rowwise() - c.mean.transpose()).transpose();  // d x n
    f.llt.matrixL().solveInPlace(centered);
    Vector maha = centered.colwise().squaredNorm().transpose();
    out.col(i) = (f.log_weight + f.log_norm) - 0.5 * maha.array();
  }
  return out;
}

inline Vector rowwise_log_sum_exp(const Matrix& m) {
  Vector out(m.rows());
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    double peak = m.row(t).maxCoeff();
    if (!std::isfinite(peak)) {
      out(t) = peak;
      continue;
    }
    out(t) = peak + std::log((m.row(t).array() - peak).exp().sum());
  }
  return out;
}

inline double max_abs_change(const GmmParams& a, const GmmParams& b) {
  double change = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Component& x = a.components[i];
    const Component& y = b.components[i];
    change = std::max(change, std::abs(x.weight - y.weight));
    change = std::max(change, (x.mean - y.mean).cwiseAbs().maxCoeff());
    change = std::max(change, (x.covariance - y.covariance).cwiseAbs().maxCoeff());
  }
  return change;
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// (1 - s) * a + s * b, componentwise. Convex, so weights stay normalized and
// covariances keep their eigenvalue floor.
inline GmmParams blend(const GmmParams& a, const GmmParams& b, double s) {
  GmmParams out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    Component& c = out.components[i];
    const Component& t = b.components[i];
    c.weight = (1.0 - s) * c.weight + s * t.weight;
    c.mean = (1.0 - s) * c.mean + s * t.mean;
    c.covariance = (1.0 - s) * c.covariance + s * t.covariance;
  }
  return out;
}

}  // namespace detail

inline void validate(const GmmParams& params) {
  if (params.dim < 1) throw Error(ErrorKind::InvalidArgument, "dim must be >= 1");
  if (params.components.empty()) throw Error(ErrorKind::InvalidArgument, "mixture has no components");
  double total = 0.0;
  for (const Component& c : params.components) {
    if (c.mean.size() != params.dim || c.covariance.rows() != params.dim || c.covariance.cols() != params.dim)
      throw Error(ErrorKind::DimensionMismatch, "component shape does not match dim");
    if (!(c.weight >= 0.0) || !std::isfinite(c.weight))
      throw Error(ErrorKind::InvalidArgument, "component weights must be finite and non-negative");
    if (!c.mean.allFinite() || !c.covariance.allFinite())
      throw Error(ErrorKind::NonFiniteValue, "component parameters must be finite");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::InvalidArgument, "weights must sum to 1");
}

// log p(x | params) via log-sum-exp over components.
inline double log_density(const GmmParams& params, const Vector& x) {
  if (x.size() != params.dim)
    throw Error(ErrorKind::DimensionMismatch,
                "point has dim " + std::to_string(x.size()) + ", mixture has " + std::to_string(params.dim));
  Matrix row = x.transpose();
  return detail::rowwise_log_sum_exp(detail::weighted_log_joint(params, row))(0);
}

// Batched log densities for every row of `data`.
inline Vector log_densities(const GmmParams& params, const Matrix& data) {
  if (data.cols() != params.dim) throw Error(ErrorKind::DimensionMismatch, "data columns do not match mixture dim");
  return detail::rowwise_log_sum_exp(detail::weighted_log_joint(params, data));
}

// Hard assignment: argmax responsibility, ties toward the lower index.
inline std::vector<int> assign_components(const GmmParams& params, const Matrix& data) {
  Matrix joint = detail::weighted_log_joint(params, data);
  std::vector<int> out(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index t = 0; t < joint.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < joint.cols(); ++i)
      if (joint(t, i) > joint(t, best)) best = i;
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

inline GmmParams kmeans_pp_init(const Matrix& data, int k, std::uint64_t rng_seed,
                                double covariance_regularization = 1e-2) {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  if (data.cols() < 1) throw Error(ErrorKind::InvalidArgument, "data must have at least one column");
  if (data.rows() < k)
    throw Error(ErrorKind::InsufficientSamples,
                std::to_string(data.rows()) + " samples for " + std::to_string(k) + " components");
  detail::check_finite(data);

  const Eigen::Index n = data.rows();
  const int dim = static_cast<int>(data.cols());
  Rng rng(rng_seed);

  Matrix centers(k, dim);
  centers.row(0) = data.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n))));
  Vector nearest = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = nearest.sum();
    Eigen::Index pick = n - 1;
    if (!(total > 0.0)) {
      pick = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
    } else {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      Eigen::Index last_positive = 0;
      bool found = false;
      for (Eigen::Index t = 0; t < n; ++t) {
        if (nearest(t) > 0.0) last_positive = t;
        acc += nearest(t);
        if (acc > target && nearest(t) > 0.0) {
          pick = t;
          found = true;
          break;
        }
      }
      if (!found) pick = last_positive;
    }
    centers.row(j) = data.row(pick);
    nearest = nearest.cwiseMin((data.rowwise() - centers.row(j)).rowwise().squaredNorm());
  }

  // One hard-assignment refinement.
  std::vector<int> label(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::Index best = 0;
    (centers.rowwise() - data.row(t)).rowwise().squaredNorm().minCoeff(&best);
    label[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }

  GmmParams params;
  params.dim = dim;
  params.components.resize(static_cast<std::size_t>(k));
  std::vector<Eigen::Index> count(static_cast<std::size_t>(k), 0);
  for (int j = 0; j < k; ++j) params.components[static_cast<std::size_t>(j)].mean = Vector::Zero(dim);
  for (Eigen::Index t = 0; t < n; ++t) {
    auto j = static_cast<std::size_t>(label[static_cast<std::size_t>(t)]);
    params.components[j].mean += data.row(t).transpose();
    ++count[j];
  }
  for (int j = 0; j < k; ++j) {
    auto& c = params.components[static_cast<std::size_t>(j)];
    const auto m = count[static_cast<std::size_t>(j)];
    if (m > 0)
      c.mean /= static_cast<double>(m);
    else
      c.mean = centers.row(j).transpose();
    c.weight = static_cast<double>(m) / static_cast<double>(n);
    c.covariance = Matrix::Zero(dim, dim);
  }
  for (Eigen::Index t = 0; t < n; ++t) {
    auto& c = params.components[static_cast<std::size_t>(label[static_cast<std::size_t>(t)])];
    Vector diff = data.row(t).transpose() - c.mean;
    c.covariance.noalias() += diff * diff.transpose();
  }
  for (int j = 0; j < k; ++j) {
    auto& c = params.components[static_cast<std::size_t>(j)];
    const auto m = count[static_cast<std::size_t>(j)];
    if (m > 0) c.covariance /= static_cast<double>(m);
    c.covariance = detail::symmetrize(c.covariance);
    c.covariance.diagonal().array() += covariance_regularization;
  }
  return params;
}

// EM with a monotone safeguard. The loaded covariance update is not the exact
// maximizer of the expected complete-data likelihood, so a full step can lose
// likelihood near its fixed point. When that happens the step is shortened
// toward the previous iterate, and failing that only weights and means are
// updated (a conditional maximization step, which cannot decrease the
// likelihood).
inline FitReport em_fit(const Matrix& data, const GmmParams& init, const FitConfig& config) {
  config.validate();
  validate(init);
  if (data.cols() != init.dim) throw Error(ErrorKind::DimensionMismatch, "data columns do not match init dim");
  if (data.rows() < 1) throw Error(ErrorKind::InsufficientSamples, "no samples");
  detail::check_finite(data);

  const Eigen::Index n = data.rows();
  const int dim = init.dim;
  const std::size_t k = init.size();
  const double reg = config.covariance_regularization;

  FitReport report;
  GmmParams params = init;
  std::optional<GmmParams> previous;
  GmmParams partial;  // previous M-step with covariances held fixed
  double previous_ll = 0.0;

  auto evaluate = [&](const GmmParams& p, Matrix& joint, Vector& ll) {
    joint = detail::weighted_log_joint(p, data);
    ll = detail::rowwise_log_sum_exp(joint);
    return ll.mean();
  };

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    // E-step.
    Matrix joint;
    Vector ll;
    double mean_ll = evaluate(params, joint, ll);
    if (previous && mean_ll < previous_ll) {
      const GmmParams target = params;
      bool recovered = false;
      for (double s = 0.5; s >= 0.125; s *= 0.5) {
        params = detail::blend(*previous, target, s);
        mean_ll = evaluate(params, joint, ll);
        if (mean_ll >= previous_ll) {
          recovered = true;
          break;
        }
      }
      if (!recovered) {
        params = partial;
        mean_ll = evaluate(params, joint, ll);
        recovered = mean_ll >= previous_ll;
      }
      if (!recovered) {
        params = std::move(*previous);
        report.converged = true;
        break;
      }
    }
    report.log_likelihood_trace.push_back(mean_ll);
    Matrix resp = (joint.colwise() - ll).array().exp().matrix();
    Vector mass = resp.colwise().sum().transpose();

    // M-step.
    GmmParams next;
    next.dim = dim;
    next.components.resize(k);
    std::vector<std::size_t> starved;
    for (std::size_t i = 0; i < k; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      Component& c = next.components[i];
      if (!(mass(ii) >= 1e-12)) {
        starved.push_back(i);
        continue;
      }
      c.weight = mass(ii) / static_cast<double>(n);
      c.mean = (data.transpose() * resp.col(ii)) / mass(ii);
      Matrix centered = data.rowwise() - c.mean.transpose();
      Matrix weighted = centered.array().colwise() * resp.col(ii).array();
      c.covariance = detail::symmetrize((weighted.transpose() * centered) / mass(ii));
      c.covariance.diagonal().array() += reg;
    }
    if (!starved.empty()) {
      // Re-seed each starved component at the worst-explained remaining sample.
      std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
      for (Eigen::Index t = 0; t < n; ++t) order[static_cast<std::size_t>(t)] = t;
      std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return ll(a) < ll(b); });
      double total = 0.0;
      for (std::size_t i = 0; i < k; ++i) total += next.components[i].weight;
      const double seed_weight = 1.0 / static_cast<double>(n);
      for (std::size_t s = 0; s < starved.size(); ++s) {
        Component& c = next.components[starved[s]];
        c.mean = data.row(order[s % order.size()]).transpose();
        c.covariance = Matrix::Identity(dim, dim) * reg;
        c.weight = seed_weight;
        total += seed_weight;
      }
      for (auto& c : next.components) c.weight /= total;
      params = std::move(next);
      ++report.iterations_run;
      ++report.reseeds;
      report.log_likelihood_trace.clear();
      previous.reset();
      continue;
    }
    partial = next;
    for (std::size_t i = 0; i < k; ++i) partial.components[i].covariance = params.components[i].covariance;
    previous = params;
    previous_ll = mean_ll;
    const double change = detail::max_abs_change(params, next);
    params = std::move(next);
    ++report.iterations_run;
    if (change < config.convergence_epsilon) {
      report.converged = true;
      break;
    }
  }
  report.final_log_likelihood = log_densities(params, data).mean();
  if (previous && report.final_log_likelihood < previous_ll) {
    params = std::move(*previous);
    report.final_log_likelihood = previous_ll;
  }
  report.params = std::move(params);
  return report;
}

struct SilhouetteOptions {
  std::size_t subsample_cap = 1000;
  std::uint64_t subsample_seed = 0;
};

// Mean silhouette coefficient with Euclidean distance. Samples in singleton
// clusters contribute 0. Above `subsample_cap` samples a seeded uniform
// subsample (without replacement) is scored instead.
inline double silhouette_score(const Matrix& data, const std::vector<int>& assignments,
                               const SilhouetteOptions& options = {}) {
  if (static_cast<Eigen::Index>(assignments.size()) != data.rows())
    throw Error(ErrorKind::DimensionMismatch, "one assignment per sample required");
  if (data.rows() < 2) throw Error(ErrorKind::InsufficientSamples, "silhouette needs at least 2 samples");

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index t = 0; t < data.rows(); ++t) idx[static_cast<std::size_t>(t)] = t;
  if (options.subsample_cap >= 2 && idx.size() > options.subsample_cap) {
    Rng rng(options.subsample_seed);
    for (std::size_t i = 0; i < options.subsample_cap; ++i) {
      std::size_t j = i + uniform_index(rng, idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(options.subsample_cap);
    std::sort(idx.begin(), idx.end());
  }

  std::vector<int> labels(idx.size());
  int max_label = -1;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    labels[i] = assignments[static_cast<std::size_t>(idx[i])];
    if (labels[i] < 0) throw Error(ErrorKind::InvalidArgument, "cluster ids must be non-negative");
    max_label = std::max(max_label, labels[i]);
  }
  std::vector<std::size_t> sizes(static_cast<std::size_t>(max_label + 1), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  const auto nonempty = std::count_if(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; });
  if (nonempty < 2) throw Error(ErrorKind::DegenerateClustering, "fewer than 2 non-empty clusters");

  const std::size_t m = idx.size();
  std::vector<double> sums(sizes.size());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto li = static_cast<std::size_t>(labels[i]);
    if (sizes[li] <= 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      sums[static_cast<std::size_t>(labels[j])] += (data.row(idx[i]) - data.row(idx[j])).norm();
    }
    const double a = sums[li] / static_cast<double>(sizes[li] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sizes.size(); ++c)
      if (c != li && sizes[c] > 0) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(m);
}

struct Candidate {
  int k = 0;
  std::optional<double> silhouette;  // empty when the clustering was degenerate
};

struct ModelSelection {
  FitReport fit;
  int k = 0;
  std::optional<double> silhouette;
  std::vector<Candidate> candidates;
};

// Index of the best candidate: highest silhouette, ties toward the earlier
// (smaller k) entry. Returns nullopt when every candidate was degenerate.
inline std::optional<std::size_t> best_candidate(const std::vector<Candidate>& candidates) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!candidates[i].silhouette) continue;
    if (!best || *candidates[i].silhouette > *candidates[*best].silhouette) best = i;
  }
  return best;
}

struct SelectOptions {
  SilhouetteOptions silhouette;
  unsigned threads = 1;
};

// Fits one mixture per k in [k_min, min(k_max, n)] and keeps the one whose
// hard assignment has the highest silhouette score.
inline ModelSelection select_model(const Matrix& data, int k_min, int k_max, const FitConfig& config,
                                   std::uint64_t rng_seed, const SelectOptions& options = {}) {
  if (k_min < 1 || k_min > k_max) throw Error(ErrorKind::InvalidArgument, "need 1 <= k_min <= k_max");
  if (data.rows() < k_min)
    throw Error(ErrorKind::InsufficientSamples,
                std::to_string(data.rows()) + " samples for k_min=" + std::to_string(k_min));
  detail::check_finite(data);

  const int k_hi = static_cast<int>(std::min<Eigen::Index>(k_max, data.rows()));
  const auto count = static_cast<std::size_t>(k_hi - k_min + 1);
  std::vector<FitReport> fits(count);
  std::vector<Candidate> candidates(count);
  SilhouetteOptions sil = options.silhouette;
  sil.subsample_seed = derive_seed(rng_seed, 0x5111);

  parallel_for(count, options.threads, [&](std::size_t slot) {
    const int k = k_min + static_cast<int>(slot);
    FitConfig cfg = config;
    cfg.k = k;
    cfg.rng_seed = derive_seed(rng_seed, static_cast<std::uint64_t>(k));
    GmmParams init = kmeans_pp_init(data, k, cfg.rng_seed, cfg.covariance_regularization);
    fits[slot] = em_fit(data, init, cfg);
    candidates[slot].k = k;
    try {
      candidates[slot].silhouette = silhouette_score(data, assign_components(fits[slot].params, data), sil);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateClustering) throw;
    }
  });

  ModelSelection out;
  const std::size_t pick = best_candidate(candidates).value_or(0);
  out.fit = std::move(fits[pick]);
  out.k = candidates[pick].k;
  out.silhouette = candidates[pick].silhouette;
  out.candidates = std::move(candidates);
  return out;
}

// JSON: {dim, components:[{weight, mean:[...], covariance:[[...]]}]}.
inline nlohmann::json to_json(const GmmParams& params) {
  nlohmann::json comps = nlohmann::json::array();
  for (const Component& c : params.components) {
    nlohmann::json cov = nlohmann::json::array();
    for (int r = 0; r < params.dim; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int col = 0; col < params.dim; ++col) row.push_back(c.covariance(r, col));
      cov.push_back(std::move(row));
    }
    nlohmann::json mean = nlohmann::json::array();
    for (int r = 0; r < params.dim; ++r) mean.push_back(c.mean(r));
    comps.push_back({{"weight", c.weight}, {"mean", std::move(mean)}, {"covariance", std::move(cov)}});
  }
  return {{"dim", params.dim}, {"components", std::move(comps)}};
}

inline GmmParams gmm_from_json(const nlohmann::json& j) {
  GmmParams params;
  params.dim = j.at("dim").get<int>();
  for (const auto& jc : j.at("components")) {
    Component c;
    c.weight = jc.at("weight").get<double>();
    const auto& mean = jc.at("mean");
    const auto& cov = jc.at("covariance");
    if (static_cast<int>(mean.size()) != params.dim || static_cast<int>(cov.size()) != params.dim)
      throw Error(ErrorKind::DimensionMismatch, "component shape does not match dim");
    c.mean.resize(params.dim);
    c.covariance.resize(params.dim, params.dim);
    for (int r = 0; r < params.dim; ++r) {
      c.mean(r) = mean[static_cast<std::size_t>(r)].get<double>();
      const auto& row = cov[static_cast<std::size_t>(r)];
      if (static_cast<int>(row.size()) != params.dim)
        throw Error(ErrorKind::DimensionMismatch, "covariance row has wrong length");
      for (int col = 0; col < params.dim; ++col) c.covariance(r, col) = row[static_cast<std::size_t>(col)].get<double>();
    }
    params.components.push_back(std::move(c));
  }
  validate(params);
  return params;
}

}  // namespace cenie::gmm
