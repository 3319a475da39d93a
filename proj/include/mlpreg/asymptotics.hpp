#pragma once

// Monte Carlo checks of the large-sample theory around the true weights W0:
// the information matrix I0, Hessian -> 2 I0, sqrt(n) score -> N(0, 4 I0),
// and the comparison of log-det, OLS and true-GLS fits against I0^{-1}.
//
// All fits here are warm-started next to W0. MLP costs have permutation and
// sign symmetries, so globally fitted weights from different replications
// would not be comparable.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mlpreg/cost.hpp"
#include "mlpreg/optimizer.hpp"
#include "mlpreg/sampler.hpp"

namespace mlpreg {

enum class InfoSource { AtTrueGamma, PluginGamma };

inline std::string to_string(InfoSource s) {
  return s == InfoSource::AtTrueGamma ? "true_gamma" : "plugin_gamma";
}

struct InfoMatrix {
  Matrix i0;
  Architecture basis;
  InfoSource source = InfoSource::AtTrueGamma;
};

/// I0(k,l) = tr(gamma^{-1} Bbar(k,l)), Bbar the sample mean of
/// (dF/dW_k)(dF/dW_l)^T over the dataset's inputs. Targets are not used.
inline InfoMatrix estimate_i0(const ParamVector& w, const Dataset& data, const SpdMatrix& gamma,
                              InfoSource source = InfoSource::AtTrueGamma) {
  detail::check_data(w, data);
  detail::require_dims(gamma.dim() == data.d(), "estimate_i0: gamma has the wrong dimension");
  MlpEvaluator ev(w);
  const Eigen::Index p = ev.p(), d = data.d();
  Matrix acc = Matrix::Zero(p, p), jac;
  Vector f(d);
  for (Eigen::Index t = 0; t < data.n(); ++t) {
    ev.jacobian(detail::row_span(data.inputs, t), jac, {f.data(), static_cast<size_t>(d)});
    const Matrix m = gamma.half_solve(jac.transpose());  // d x p, m^T m = J G^{-1} J^T
    acc.selfadjointView<Eigen::Lower>().rankUpdate(m.transpose());
  }
  Matrix i0 = acc.selfadjointView<Eigen::Lower>();
  i0 /= static_cast<double>(data.n());
  return {i0, w.arch, source};
}

/// I0 at W0 with the true Gamma0 from n_ref fresh inputs.
inline InfoMatrix reference_i0(const ParamVector& w0, const SpdMatrix& gamma0, Eigen::Index n_ref,
                               std::uint64_t seed) {
  const Architecture& a = w0.arch;
  RowMatrix z = sample_inputs(n_ref, a.input_dim, derive_seed(seed, stream::kReference, 0));
  Dataset data(std::move(z), RowMatrix::Zero(n_ref, a.output_dim));
  return estimate_i0(w0, data, gamma0);
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
/// handled exactly once; the first exception is rethrown after joining.
inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (int i; !failed && (i = next++) < count;) {
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int k = 0; k < threads; ++k) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

namespace detail {

/// Dataset of replication i of a study seeded by spec.seed.
inline GenSpec replicate(const GenSpec& spec, Eigen::Index n, std::uint64_t i) {
  GenSpec s = spec;
  s.n = n;
  s.seed = derive_seed(spec.seed, stream::kReplication, i);
  return s;
}

/// Sample covariance (divisor rows - 1) of the rows of x.
inline Matrix sample_cov(const Matrix& x) {
  const Vector mean = x.colwise().mean();
  const Matrix c = x.rowwise() - mean.transpose();
  return c.transpose() * c / static_cast<double>(std::max<Eigen::Index>(x.rows() - 1, 1));
}

/// 3-point running median, endpoints kept.
inline std::vector<double> median3(const std::vector<double>& v) {
  std::vector<double> out = v;
  for (size_t i = 1; i + 1 < v.size(); ++i) {
    double a = v[i - 1], b = v[i], c = v[i + 1];
    out[i] = std::max(std::min(a, b), std::min(std::max(a, b), c));
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Hessian limit

struct HessianLimitRow {
  Eigen::Index n = 0;
  std::optional<double> distance;  // ||H U_n(W0) - 2 I0||_F / ||2 I0||_F
  std::string error;
};

struct HessianLimitTable {
  std::vector<HessianLimitRow> rows;
  bool trend_ok = false;  // non-increasing after a 3-point median filter
  double final_distance = std::numeric_limits<double>::quiet_NaN();
};

/// Row i uses a fresh dataset of size n_grid[i]. Rows where U_n is singular
/// carry the error and are left out of the trend.
inline HessianLimitTable verify_hessian_limit(const ParamVector& w0, const GenSpec& spec,
                                              const std::vector<Eigen::Index>& n_grid,
                                              const InfoMatrix& ref) {
  if (n_grid.empty()) throw InvalidArgument("verify_hessian_limit: empty n grid");
  for (size_t i = 1; i < n_grid.size(); ++i)
    if (n_grid[i] <= n_grid[i - 1]) throw InvalidArgument("verify_hessian_limit: n grid must increase");
  const Matrix target = 2.0 * ref.i0;
  HessianLimitTable out;
  std::vector<double> dist;
  for (size_t i = 0; i < n_grid.size(); ++i) {
    HessianLimitRow row;
    row.n = n_grid[i];
    GenSpec s = detail::replicate(spec, n_grid[i], i);
    s.w0 = w0;
    try {
      const Dataset data = sample_dataset(s);
      const Matrix h = hessian(LogDetCost{}, w0, data);
      row.distance = rel_frobenius(h, target, target);
      dist.push_back(*row.distance);
    } catch (const SingularCovariance& e) {
      row.error = e.what();
    }
    out.rows.push_back(row);
  }
  const std::vector<double> m = detail::median3(dist);
  out.trend_ok = !m.empty() && std::is_sorted(m.rbegin(), m.rend());
  if (out.rows.back().distance) out.final_distance = *out.rows.back().distance;
  return out;
}

// ---------------------------------------------------------------------------
// Score CLT

struct ScoreCltTable {
  int replications = 0;
  Eigen::Index n = 0;
  int failures = 0;
  Matrix covariance;         // of sqrt(n) grad U_n(W0)
  double distance = 0.0;     // relative Frobenius distance to 4 I0
  Vector variance_ratios;    // var_k / (4 I0_kk)
  double ratio_band = 0.0;   // 4 / sqrt(R)
  Vector mean_z;             // mean_k / (sd_k / sqrt(R))
  bool ratios_ok = false;
  bool means_ok = false;
};

inline ScoreCltTable verify_score_clt(const ParamVector& w0, const GenSpec& spec, int replications,
                                      Eigen::Index n, const InfoMatrix& ref, int threads = 1) {
  if (replications < 200) throw InvalidArgument("verify_score_clt: need at least 200 replications");
  if (n < 2) throw InvalidArgument("verify_score_clt: n must be >= 2");
  const Eigen::Index p = w0.size();
  std::vector<std::optional<Vector>> scores(replications);
  parallel_for(replications, threads, [&](int i) {
    GenSpec s = detail::replicate(spec, n, static_cast<std::uint64_t>(i));
    s.w0 = w0;
    try {
      scores[i] = std::sqrt(static_cast<double>(n)) * gradient(LogDetCost{}, w0, sample_dataset(s));
    } catch (const SingularCovariance&) {
    }
  });
  ScoreCltTable out;
  out.replications = replications;
  out.n = n;
  std::vector<Vector> ok;
  for (auto& s : scores) {
    if (s) ok.push_back(*s);
    else ++out.failures;
  }
  Matrix x(static_cast<Eigen::Index>(ok.size()), p);
  for (size_t i = 0; i < ok.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = ok[i].transpose();
  const double rc = static_cast<double>(ok.size());
  out.covariance = detail::sample_cov(x);
  const Matrix target = 4.0 * ref.i0;
  out.distance = rel_frobenius(out.covariance, target, target);
  out.ratio_band = 4.0 / std::sqrt(rc);
  out.variance_ratios = out.covariance.diagonal().cwiseQuotient(target.diagonal());
  const Vector mean = x.colwise().mean();
  out.mean_z = mean.cwiseQuotient((out.covariance.diagonal() / rc).cwiseSqrt());
  out.ratios_ok = ((out.variance_ratios.array() - 1.0).abs() <= out.ratio_band).all();
  out.means_ok = (out.mean_z.array().abs() <= 4.0).all();
  return out;
}

// ---------------------------------------------------------------------------
// Estimator comparison

enum class Estimator { LogDet, Ols, GlsTrue };

inline std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::LogDet:
      return "logdet";
    case Estimator::Ols:
      return "ols";
    case Estimator::GlsTrue:
      return "gls_true";
  }
  return "?";
}

inline constexpr Estimator kEstimators[] = {Estimator::LogDet, Estimator::Ols, Estimator::GlsTrue};

/// One fit of one replication.
struct Replicate {
  bool converged = false;
  Vector w;            // empty when the fit threw
  double cost = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  std::string error;
};

struct EstimatorResult {
  Estimator estimator = Estimator::LogDet;
  std::vector<Replicate> fits;  // indexed by replication
  int converged = 0;
  int failures = 0;
  Matrix scaled_cov;            // sample cov of sqrt(n)(W_hat - W0), converged fits only
};

struct McReport {
  Eigen::Index n = 0;
  int replications = 0;
  double perturbation = 0.0;
  ParamVector w0;
  Matrix gamma0;
  Matrix i0;
  Matrix i0_inv;
  std::vector<EstimatorResult> estimators;  // LogDet, Ols, GlsTrue
  int common = 0;                           // replications where all three converged
  double dist_logdet_i0inv = 0.0;           // (a)
  double dist_logdet_gls = 0.0;             // (b)
  double efficiency_ratio = 0.0;            // (c) tr S_ols / tr S_logdet
  double efficiency_se = 0.0;               // delta-method standard error of (c)
  double failure_rate = 0.0;                // worst estimator

  const EstimatorResult& result(Estimator e) const {
    return estimators[static_cast<size_t>(e)];
  }
};

inline CostKind cost_kind(Estimator e, const SpdMatrix& gamma0) {
  switch (e) {
    case Estimator::LogDet:
      return LogDetCost{};
    case Estimator::Ols:
      return OlsCost{};
    case Estimator::GlsTrue:
      return GlsCost{gamma0};
  }
  return OlsCost{};
}

/// Warm start of replication i: W0 + sd * N(0, I).
inline ParamVector perturbed_start(const ParamVector& w0, std::uint64_t seed, std::uint64_t i, double sd) {
  Rng rng(derive_seed(seed, stream::kPerturb, i));
  ParamVector w = w0;
  for (Eigen::Index k = 0; k < w.size(); ++k) w[k] += sd * rng.normal();
  return w;
}

/// Fits every estimator on the same R datasets. Covariances use converged
/// fits only, metric (c) and its standard error use replications where all
/// three estimators converged. cfg.warm_start is ignored: each replication
/// starts at perturbed_start(W0, spec.seed, i, perturbation).
inline McReport run_comparison(const GenSpec& spec, Eigen::Index n, int replications, FitConfig cfg,
                               const InfoMatrix& ref, int threads = 1, double perturbation = 0.01) {
  if (replications < 200) throw InvalidArgument("run_comparison: need at least 200 replications");
  if (n < 2) throw InvalidArgument("run_comparison: n must be >= 2");
  cfg.validate();
  const ParamVector& w0 = spec.w0;
  const Architecture& arch = w0.arch;
  const Eigen::Index p = w0.size();
  const SpdMatrix& g0 = spec.noise.gamma0;

  McReport rep;
  rep.n = n;
  rep.replications = replications;
  rep.perturbation = perturbation;
  rep.w0 = w0;
  rep.gamma0 = g0.entries();
  rep.i0 = ref.i0;
  rep.i0_inv = SpdMatrix(ref.i0).inverse().entries();
  for (Estimator e : kEstimators) {
    EstimatorResult r;
    r.estimator = e;
    r.fits.resize(replications);
    rep.estimators.push_back(std::move(r));
  }

  parallel_for(replications, threads, [&](int i) {
    const Dataset data = sample_dataset(detail::replicate(spec, n, static_cast<std::uint64_t>(i)));
    FitConfig c = cfg;
    c.warm_start = perturbed_start(w0, spec.seed, static_cast<std::uint64_t>(i), perturbation);
    for (Estimator e : kEstimators) {
      Replicate& out = rep.estimators[static_cast<size_t>(e)].fits[i];
      try {
        const FitReport fr = minimize(cost_kind(e, g0), data, arch, c);
        out.converged = fr.converged;
        out.w = fr.w_hat.values;
        out.cost = fr.final_cost;
        out.iterations = fr.iterations;
        if (!fr.converged) out.error = "not converged (" + fr.stop_reason + ")";
      } catch (const AllRestartsFailed& ex) {
        out.error = ex.what();
      }
    }
  });

  const double root_n = std::sqrt(static_cast<double>(n));
  for (EstimatorResult& r : rep.estimators) {
    std::vector<Eigen::Index> ok;
    for (int i = 0; i < replications; ++i) {
      if (r.fits[i].converged) ok.push_back(i);
    }
    r.converged = static_cast<int>(ok.size());
    r.failures = replications - r.converged;
    Matrix x(r.converged, p);
    for (size_t j = 0; j < ok.size(); ++j)
      x.row(static_cast<Eigen::Index>(j)) = root_n * (r.fits[ok[j]].w - w0.values).transpose();
    r.scaled_cov = r.converged >= 2 ? detail::sample_cov(x) : Matrix::Constant(p, p, std::nan(""));
    rep.failure_rate = std::max(rep.failure_rate, static_cast<double>(r.failures) / replications);
  }

  const Matrix& s_ld = rep.result(Estimator::LogDet).scaled_cov;
  const Matrix& s_gls = rep.result(Estimator::GlsTrue).scaled_cov;
  const double ref_norm = rep.i0_inv.norm();
  rep.dist_logdet_i0inv = (s_ld - rep.i0_inv).norm() / ref_norm;
  rep.dist_logdet_gls = (s_ld - s_gls).norm() / ref_norm;

  // Paired ratio of mean centred squared norms, with a delta-method error.
  std::vector<int> common;
  for (int i = 0; i < replications; ++i) {
    bool all = true;
    for (const EstimatorResult& r : rep.estimators) all = all && r.fits[i].converged;
    if (all) common.push_back(i);
  }
  rep.common = static_cast<int>(common.size());
  if (rep.common >= 2) {
    auto centred = [&](Estimator e) {
      Matrix x(rep.common, p);
      for (int j = 0; j < rep.common; ++j)
        x.row(j) = root_n * (rep.result(e).fits[common[j]].w - w0.values).transpose();
      Matrix c = x.rowwise() - x.colwise().mean();
      return Vector(c.rowwise().squaredNorm());
    };
    const Vector a = centred(Estimator::Ols);
    const Vector b = centred(Estimator::LogDet);
    const double ma = a.mean(), mb = b.mean();
    rep.efficiency_ratio = ma / mb;
    const Vector lin = a - rep.efficiency_ratio * b;
    const double var = (lin.array() - lin.mean()).square().sum() / (rep.common - 1);
    rep.efficiency_se = std::sqrt(var / rep.common) / mb;
  } else {
    rep.efficiency_ratio = rep.efficiency_se = std::nan("");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Consistency trend

struct ConsistencyRow {
  Eigen::Index n = 0;
  int converged = 0;
  double median_sup_error = std::numeric_limits<double>::quiet_NaN();  // median ||W_hat - W0||_inf
};

struct ConsistencyTable {
  std::vector<ConsistencyRow> rows;
  bool strictly_decreasing = false;
};

/// Log-det fits from perturbed warm starts for each n; replication i at every
/// n uses its own dataset seed.
inline ConsistencyTable consistency_trend(const GenSpec& spec, const std::vector<Eigen::Index>& n_list,
                                          int replications, FitConfig cfg, int threads = 1,
                                          double perturbation = 0.01) {
  if (replications < 1) throw InvalidArgument("consistency_trend: replications must be >= 1");
  cfg.validate();
  const ParamVector& w0 = spec.w0;
  ConsistencyTable out;
  for (size_t g = 0; g < n_list.size(); ++g) {
    const Eigen::Index n = n_list[g];
    std::vector<double> err(replications, std::nan(""));
    parallel_for(replications, threads, [&](int i) {
      const std::uint64_t idx = static_cast<std::uint64_t>(g) * 1000003u + static_cast<std::uint64_t>(i);
      const Dataset data = sample_dataset(detail::replicate(spec, n, idx));
      FitConfig c = cfg;
      c.warm_start = perturbed_start(w0, spec.seed, idx, perturbation);
      try {
        const FitReport fr = minimize(LogDetCost{}, data, w0.arch, c);
        if (fr.converged) err[i] = (fr.w_hat.values - w0.values).cwiseAbs().maxCoeff();
      } catch (const AllRestartsFailed&) {
      }
    });
    std::vector<double> ok;
    for (double e : err)
      if (!std::isnan(e)) ok.push_back(e);
    ConsistencyRow row;
    row.n = n;
    row.converged = static_cast<int>(ok.size());
    if (!ok.empty()) {
      std::sort(ok.begin(), ok.end());
      const size_t m = ok.size();
      row.median_sup_error = m % 2 ? ok[m / 2] : 0.5 * (ok[m / 2 - 1] + ok[m / 2]);
    }
    out.rows.push_back(row);
  }
  out.strictly_decreasing = !out.rows.empty();
  for (size_t i = 1; i < out.rows.size(); ++i)
    out.strictly_decreasing = out.strictly_decreasing &&
                              out.rows[i].median_sup_error < out.rows[i - 1].median_sup_error;
  return out;
}

}  // namespace mlpreg
