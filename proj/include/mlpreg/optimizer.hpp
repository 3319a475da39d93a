#pragma once

// Minimization of a CostKind over the MLP weights: dense BFGS with Armijo
// backtracking, or damped Newton on the exact log-det Hessian, wrapped in a
// multi-start loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mlpreg/cost.hpp"
#include "mlpreg/mlp.hpp"
#include "mlpreg/rng.hpp"
#include "mlpreg/spd.hpp"

namespace mlpreg {

enum class Method { QuasiNewton, DampedNewton };

inline std::string to_string(Method m) {
  return m == Method::QuasiNewton ? "quasi_newton" : "damped_newton";
}

inline Method method_from_string(const std::string& s) {
  if (s == "quasi_newton" || s == "qn" || s == "bfgs") return Method::QuasiNewton;
  if (s == "damped_newton" || s == "newton") return Method::DampedNewton;
  throw InvalidArgument("unknown method '" + s + "' (quasi_newton|damped_newton)");
}

struct FitConfig {
  Method method = Method::QuasiNewton;
  double grad_tol = 1e-6;   // sup norm of the gradient
  double cost_tol = 1e-10;  // relative decrease per accepted step
  int max_iters = 5000;
  int restarts = 10;
  std::uint64_t seed = 0;
  std::optional<ParamVector> warm_start;

  void validate() const {
    if (!(grad_tol > 0.0) || !(cost_tol > 0.0)) throw InvalidArgument("FitConfig: tolerances must be > 0");
    if (max_iters < 1) throw InvalidArgument("FitConfig: max_iters must be >= 1");
    if (restarts < 1) throw InvalidArgument("FitConfig: restarts must be >= 1");
  }
};

/// Outcome of one restart. `error` is empty when the run finished normally.
struct RestartRecord {
  int restart = 0;
  std::string error;
  bool converged = false;
  double final_cost = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double jitter = 0.0;
};

struct FitReport {
  ParamVector w_hat;
  double final_cost = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  std::string stop_reason;  // "gradient", "cost", "max_iters"
  int restarts_used = 0;
  int best_restart = -1;
  double jitter = 0.0;
  std::vector<RestartRecord> failure_log;  // one entry per restart, in order
  std::vector<double> cost_history;        // accepted costs of the best restart
};

/// AllRestartsFailed carrying the per-restart log.
class RestartsFailed : public AllRestartsFailed {
 public:
  RestartsFailed(const std::string& what, std::vector<RestartRecord> log)
      : AllRestartsFailed(what), log_(std::move(log)) {}
  const std::vector<RestartRecord>& log() const noexcept { return log_; }

 private:
  std::vector<RestartRecord> log_;
};

inline constexpr double kArmijoC1 = 1e-4;
inline constexpr int kMaxHalvings = 40;

/// Backtracking Armijo search from step 1.0, halving up to 40 times.
/// `f` may throw SingularCovariance at trial points; those count as rejected.
inline double line_search(const std::function<double(const Vector&)>& f, const Vector& w, double f0,
                          const Vector& g0, const Vector& direction) {
  const double slope = g0.dot(direction);
  if (!(slope < 0.0)) throw LineSearchBreakdown("line search: direction is not a descent direction");
  double step = 1.0;
  for (int i = 0; i <= kMaxHalvings; ++i) {
    double ft = std::numeric_limits<double>::infinity();
    try {
      ft = f(w + step * direction);
    } catch (const SingularCovariance&) {
    }
    if (std::isfinite(ft) && ft <= f0 + kArmijoC1 * step * slope) return step;
    step *= 0.5;
  }
  throw LineSearchBreakdown("line search: no Armijo step after 40 halvings");
}

/// Convenience form that evaluates the cost and gradient at `w` itself.
inline double line_search(const std::function<double(const Vector&)>& f,
                          const std::function<Vector(const Vector&)>& grad, const Vector& w,
                          const Vector& direction) {
  return line_search(f, w, f(w), grad(w), direction);
}

struct DampedHessian {
  Matrix matrix;
  double lambda = 0.0;
  bool gradient_fallback = false;  // damping exceeded 1e6; use identity
};

/// H + lambda I with lambda escalated x10 (from 1e-6 when 0) until the
/// Cholesky factorization succeeds. Past 1e6 the identity is returned.
inline DampedHessian damp_hessian(const Matrix& h, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("damp_hessian: lambda must be >= 0");
  detail::require_dims(h.rows() == h.cols(), "damp_hessian: H must be square");
  const Matrix sym = 0.5 * (h + h.transpose());
  const Matrix id = Matrix::Identity(h.rows(), h.cols());
  while (lambda <= 1e6) {
    Matrix candidate = lambda == 0.0 ? sym : Matrix(sym + lambda * id);
    Eigen::LLT<Matrix> llt(candidate);
    bool ok = llt.info() == Eigen::Success && candidate.allFinite();
    if (ok) {
      const Matrix& l = llt.matrixLLT();
      for (Eigen::Index i = 0; i < l.rows(); ++i) ok = ok && l(i, i) > 0.0;
    }
    if (ok) return {lambda == 0.0 ? h : Matrix(h + lambda * id), lambda, false};
    lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
  }
  return {id, lambda, true};
}

namespace detail {

struct RunResult {
  Vector w;
  double cost = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string stop_reason;
  std::vector<double> history;
};

inline RunResult run_descent(const CostKind& kind, const Dataset& data, const ParamVector& start,
                             const FitConfig& cfg) {
  const Architecture& arch = start.arch;
  ParamVector scratch = start;
  auto f = [&](const Vector& x) {
    scratch.values = x;
    return cost(kind, scratch, data);
  };
  auto eval = [&](const Vector& x, bool with_hessian) {
    scratch.values = x;
    return evaluate(kind, scratch, data, with_hessian);
  };
  const bool newton = cfg.method == Method::DampedNewton;
  if (newton && !std::holds_alternative<LogDetCost>(kind))
    throw InvalidArgument("damped Newton needs the analytic Hessian, available for the log-det cost only");

  RunResult out;
  Vector x = start.values;
  DerivBundle cur = eval(x, newton);
  out.history.push_back(cur.cost);
  const Eigen::Index p = arch.param_count();
  const Matrix id = Matrix::Identity(p, p);
  // Initial inverse-Hessian guess: first trial step of length 0.1.
  auto fresh = [&](const Vector& g) { return Matrix(id * (0.1 / std::max(g.norm(), 1e-300))); };
  Matrix inv_h = fresh(cur.gradient);
  bool inv_h_fresh = true;
  bool first_update = true;
  double lambda = 0.0;

  for (int iter = 0;; ++iter) {
    out.iterations = iter;
    const double gnorm = cur.gradient.cwiseAbs().maxCoeff();
    if (gnorm <= cfg.grad_tol) {
      out.converged = true;
      out.stop_reason = "gradient";
      break;
    }
    if (iter >= cfg.max_iters) {
      out.stop_reason = "max_iters";
      break;
    }

    Vector dir;
    if (newton) {
      const DampedHessian dh = damp_hessian(*cur.hessian, lambda);
      lambda = dh.gradient_fallback ? 1e6 : dh.lambda;
      dir = dh.gradient_fallback ? Vector(-cur.gradient)
                                 : Vector(-dh.matrix.llt().solve(cur.gradient));
    } else {
      dir = -inv_h * cur.gradient;
      if (!(cur.gradient.dot(dir) < 0.0)) {
        inv_h = fresh(cur.gradient);
        inv_h_fresh = true;
        first_update = true;
        dir = -inv_h * cur.gradient;
      }
    }

    double step;
    try {
      step = line_search(f, x, cur.cost, cur.gradient, dir);
    } catch (const LineSearchBreakdown&) {
      if (newton || inv_h_fresh) throw;
      inv_h = fresh(cur.gradient);
      inv_h_fresh = true;
      first_update = true;
      dir = -inv_h * cur.gradient;
      step = line_search(f, x, cur.cost, cur.gradient, dir);
    }

    const Vector x_new = x + step * dir;
    DerivBundle next = eval(x_new, newton);
    const Vector s = x_new - x;
    const Vector y = next.gradient - cur.gradient;
    const double rel_decrease = (cur.cost - next.cost) / std::max(1.0, std::abs(cur.cost));

    if (newton) {
      if (step == 1.0) lambda = lambda > 1e-6 ? lambda / 10.0 : 0.0;
    } else {
      const double ys = y.dot(s);
      if (ys > 1e-10 * y.norm() * s.norm()) {
        if (first_update) {
          inv_h = id * (ys / y.squaredNorm());
          first_update = false;
        }
        const double rho = 1.0 / ys;
        const Matrix left = id - rho * s * y.transpose();
        inv_h = left * inv_h * left.transpose() + rho * s * s.transpose();
        inv_h_fresh = false;
      }
    }

    x = x_new;
    cur = std::move(next);
    out.history.push_back(cur.cost);
    if (rel_decrease <= cfg.cost_tol) {
      out.iterations = iter + 1;
      out.converged = true;
      out.stop_reason = "cost";
      break;
    }
  }
  out.w = x;
  out.cost = cur.cost;
  out.grad_norm = cur.gradient.cwiseAbs().maxCoeff();
  return out;
}

inline CostKind with_jitter(const CostKind& kind, double jitter) {
  if (std::holds_alternative<LogDetCost>(kind)) return LogDetCost{jitter};
  return kind;
}

}  // namespace detail

/// Starting point of restart `r`: the warm start for r = 0 when present,
/// otherwise init_random with a seed derived from (cfg.seed, r).
inline ParamVector restart_start(const Architecture& arch, const FitConfig& cfg, int r) {
  if (r == 0 && cfg.warm_start) return *cfg.warm_start;
  return init_random(arch, derive_seed(cfg.seed, stream::kInit, static_cast<std::uint64_t>(r)));
}

/// Best local minimizer over `cfg.restarts` runs: lowest cost among converged
/// runs (ties to the lowest restart index), else the lowest-cost finished run.
/// A LogDet run that hits SingularCovariance is retried once with jitter
/// 1e-8 tr(Gamma_n)/d computed at its starting point.
inline FitReport minimize(const CostKind& kind, const Dataset& data, const Architecture& arch,
                          const FitConfig& cfg) {
  cfg.validate();
  arch.validate();
  if (cfg.warm_start && !(cfg.warm_start->arch == arch))
    throw DimensionMismatch("warm start architecture differs from the fitted architecture");
  detail::check_data(ParamVector(arch), data);

  FitReport report;
  std::optional<detail::RunResult> best;
  for (int r = 0; r < cfg.restarts; ++r) {
    const ParamVector start = restart_start(arch, cfg, r);
    RestartRecord rec;
    rec.restart = r;
    std::optional<detail::RunResult> run;
    double jitter = 0.0;
    for (int attempt = 0; attempt < 2 && !run; ++attempt) {
      try {
        run = detail::run_descent(detail::with_jitter(kind, jitter), data, start, cfg);
        rec.error.clear();
      } catch (const SingularCovariance& e) {
        rec.error = std::string("SingularCovariance: ") + e.what();
        if (attempt > 0 || !std::holds_alternative<LogDetCost>(kind)) break;
        const RowMatrix res = residuals(start, data);
        jitter = 1e-8 * res.squaredNorm() / static_cast<double>(data.n() * data.d());
        if (!(jitter > 0.0)) break;
      } catch (const LineSearchBreakdown& e) {
        rec.error = std::string("LineSearchBreakdown: ") + e.what();
        break;
      }
    }
    rec.jitter = jitter;
    if (run) {
      rec.converged = run->converged;
      rec.final_cost = run->cost;
      rec.iterations = run->iterations;
      const bool better =
          !best || (run->converged && !best->converged) ||
          (run->converged == best->converged && run->cost < best->cost);
      if (better) {
        best = std::move(run);
        report.best_restart = r;
        report.jitter = jitter;
      }
    }
    report.failure_log.push_back(rec);
  }
  report.restarts_used = cfg.restarts;
  if (!best) {
    std::string msg = "all " + std::to_string(cfg.restarts) + " restarts failed";
    if (!report.failure_log.empty()) msg += "; last: " + report.failure_log.back().error;
    throw RestartsFailed(msg, report.failure_log);
  }
  report.w_hat = ParamVector(arch, best->w);
  report.final_cost = best->cost;
  report.grad_norm = best->grad_norm;
  report.iterations = best->iterations;
  report.converged = best->converged;
  report.stop_reason = best->stop_reason;
  report.cost_history = std::move(best->history);
  return report;
}

}  // namespace mlpreg
