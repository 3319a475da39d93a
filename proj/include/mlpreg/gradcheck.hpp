#pragma once

// Finite-difference audit of the analytic log-det gradient and Hessian over
// random small problems. Used by the `gradcheck` subcommand.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>

#include "mlpreg/cost.hpp"
#include "mlpreg/sampler.hpp"

namespace mlpreg {

struct GradcheckConfig {
  std::uint64_t seed = 0;
  int trials = 100;
  std::optional<Architecture> arch;  // fixed shape; random per trial when empty
  double corrupt_gradient = 0.0;     // added to dU/dW_0, to prove the check can fail
  double grad_tol = 1e-6;
  double hess_tol = 1e-5;
};

struct GradcheckResult {
  int trials = 0;
  double max_grad_rel_err = 0.0;  // |a - b| / max(|a|, |b|, 1e-3)
  double max_hess_abs_err = 0.0;  // entrywise, vs central differences of the gradient
  int worst_grad_trial = -1;
  int worst_hess_trial = -1;
  bool ok = false;
};

namespace detail {

struct GradcheckInstance {
  ParamVector w;
  Dataset data;
};

/// q in 1..3, hidden [2..3], d in 1..3, n in 20..200; evaluated at a point
/// 0.3 N(0,1) away from the generating weights.
inline GradcheckInstance gradcheck_instance(std::uint64_t seed, const std::optional<Architecture>& fixed) {
  Rng rng(seed);
  const int q = 1 + static_cast<int>(rng.next_u64() % 3);
  const int h = 2 + static_cast<int>(rng.next_u64() % 2);
  const int d = 1 + static_cast<int>(rng.next_u64() % 3);
  const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng.next_u64() % 181);
  const Architecture arch = fixed ? *fixed : Architecture(q, {h}, d);
  ParamVector w0(arch);
  for (Eigen::Index k = 0; k < w0.size(); ++k) w0[k] = rng.uniform(-1.5, 1.5);
  Matrix g(arch.output_dim, arch.output_dim);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Matrix gamma = g * g.transpose() + Matrix::Identity(arch.output_dim, arch.output_dim);
  gamma *= 0.25 * arch.output_dim / gamma.trace();
  GenSpec spec{w0, NoiseSpec{SpdMatrix(gamma)}, InputLaw::StandardGaussian,
               std::max<Eigen::Index>(n, arch.output_dim + 1), rng.next_u64()};
  Dataset data = sample_dataset(spec);
  ParamVector w = w0;
  for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = std::clamp(w[k] + 0.3 * rng.normal(), -2.0, 2.0);
  return {w, std::move(data)};
}

}  // namespace detail

inline GradcheckResult run_gradcheck(const GradcheckConfig& cfg) {
  if (cfg.trials < 1) throw InvalidArgument("gradcheck: trials must be >= 1");
  GradcheckResult res;
  res.trials = cfg.trials;
  const CostKind kind = LogDetCost{};
  for (int trial = 0; trial < cfg.trials; ++trial) {
    auto inst = detail::gradcheck_instance(derive_seed(cfg.seed, 0x6c, static_cast<std::uint64_t>(trial)), cfg.arch);
    ParamVector& w = inst.w;
    const Eigen::Index p = w.size();
    DerivBundle b = evaluate(kind, w, inst.data, true);
    b.gradient[0] += cfg.corrupt_gradient;

    ParamVector wp = w;
    const double hg = 1e-6, hh = 1e-5;
    for (Eigen::Index k = 0; k < p; ++k) {
      wp[k] = w[k] + hg;
      const double fp = cost(kind, wp, inst.data);
      wp[k] = w[k] - hg;
      const double fm = cost(kind, wp, inst.data);
      wp[k] = w[k];
      const double fd = (fp - fm) / (2.0 * hg);
      const double e = std::abs(b.gradient[k] - fd) / std::max({std::abs(b.gradient[k]), std::abs(fd), 1e-3});
      if (e > res.max_grad_rel_err) {
        res.max_grad_rel_err = e;
        res.worst_grad_trial = trial;
      }
    }
    for (Eigen::Index l = 0; l < p; ++l) {
      wp[l] = w[l] + hh;
      const Vector gp = gradient(kind, wp, inst.data);
      wp[l] = w[l] - hh;
      const Vector gm = gradient(kind, wp, inst.data);
      wp[l] = w[l];
      const double e = ((gp - gm) / (2.0 * hh) - b.hessian->col(l)).cwiseAbs().maxCoeff();
      if (e > res.max_hess_abs_err) {
        res.max_hess_abs_err = e;
        res.worst_hess_trial = trial;
      }
    }
  }
  res.ok = res.max_grad_rel_err < cfg.grad_tol && res.max_hess_abs_err < cfg.hess_tol;
  return res;
}

}  // namespace mlpreg
