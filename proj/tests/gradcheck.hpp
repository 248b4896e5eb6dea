#pragma once

// Finite-difference check of the PPO loss gradient on random small networks.

#include <algorithm>
#include <cmath>
#include <string>

#include "cenie/student.hpp"

namespace gradcheck {

using namespace cenie;
using namespace cenie::student;

inline Policy random_policy(const Architecture& arch, Rng& rng, double scale = 0.5) {
  Policy p(arch, rng());
  std::normal_distribution<double> z(0.0, scale);
  for (Eigen::Index i = 0; i < p.params().size(); ++i) p.params()(i) = z(rng);
  return p;
}

// Batch with old log-probs and values perturbed away from the current ones,
// keeping every sample clear of the clipping kinks so central differences are valid.
inline Batch random_batch(const Policy& p, Eigen::Index n, double clip, Rng& rng) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Batch b;
  b.observations = Matrix::NullaryExpr(n, p.architecture().inputs, [&] { return z(rng); });
  ForwardPass fp = p.forward(b.observations);
  Matrix logp = log_softmax(fp.logits);
  b.actions.resize(static_cast<std::size_t>(n));
  b.old_log_probs.resize(n);
  b.old_values.resize(n);
  b.advantages.resize(n);
  b.returns.resize(n);
  const double margin = 1e-3;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(p.architecture().actions)));
    b.actions[static_cast<std::size_t>(i)] = a;
    for (;;) {
      b.old_log_probs(i) = logp(i, a) + 0.4 * u(rng);
      const double r = std::exp(logp(i, a) - b.old_log_probs(i));
      if (std::abs(r - (1.0 - clip)) > margin && std::abs(r - (1.0 + clip)) > margin) break;
    }
    b.advantages(i) = z(rng);
    for (;;) {
      b.old_values(i) = fp.values(i) + 0.4 * u(rng);
      b.returns(i) = fp.values(i) + z(rng);
      const double dv = fp.values(i) - b.old_values(i);
      const double err = fp.values(i) - b.returns(i);
      const double err_c = b.old_values(i) + std::clamp(dv, -clip, clip) - b.returns(i);
      if (std::abs(std::abs(dv) - clip) > margin && std::abs(err * err - err_c * err_c) > margin) break;
    }
  }
  return b;
}

inline bool gradient_matches(const Policy& base, const Batch& batch, const PpoConfig& cfg, std::string& why) {
  Vector grad;
  ppo_loss(base, batch, cfg, &grad);
  Policy p = base;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < p.params().size(); ++i) {
    const double keep = p.params()(i);
    p.params()(i) = keep + h;
    const double up = ppo_loss(p, batch, cfg).total;
    p.params()(i) = keep - h;
    const double down = ppo_loss(p, batch, cfg).total;
    p.params()(i) = keep;
    const double fd = (up - down) / (2.0 * h);
    const double tol = std::max(1e-4 * std::max(std::abs(fd), std::abs(grad(i))), 1e-6);
    if (std::abs(fd - grad(i)) > tol) {
      why = "param " + std::to_string(i) + ": analytic " + std::to_string(grad(i)) + " vs fd " + std::to_string(fd);
      return false;
    }
  }
  return true;
}

}  // namespace gradcheck
