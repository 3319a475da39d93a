#pragma once

// JSON / CSV renderings of fit and Monte Carlo results. No timestamps or
// host details go in, so identical inputs give identical bytes.

#include <string>

#include "mlpreg/asymptotics.hpp"
#include "mlpreg/io.hpp"
#include "mlpreg/optimizer.hpp"
#include "mlpreg/rng.hpp"

#ifndef MLPREG_VERSION
#define MLPREG_VERSION "0.0.0"
#endif

namespace mlpreg {

inline constexpr const char* kVersion = MLPREG_VERSION;

inline json provenance() {
  return {{"version", kVersion}, {"rng", Rng::kAlgorithm}};
}

inline json to_json(const FitReport& r, const std::string& cost) {
  json log = json::array();
  for (const RestartRecord& rec : r.failure_log) {
    log.push_back({{"restart", rec.restart},
                   {"error", rec.error},
                   {"converged", rec.converged},
                   {"final_cost", rec.final_cost},
                   {"iterations", rec.iterations},
                   {"jitter", rec.jitter}});
  }
  return {{"cost", cost},
          {"final_cost", r.final_cost},
          {"grad_norm", r.grad_norm},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"stop_reason", r.stop_reason},
          {"restarts_used", r.restarts_used},
          {"best_restart", r.best_restart},
          {"jitter", r.jitter},
          {"failure_log", log},
          {"cost_history", r.cost_history},
          {"w_hat", weights_json(r.w_hat)}};
}

inline json to_json(const HessianLimitTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json row = {{"n", r.n}};
    row["distance"] = r.distance ? json(*r.distance) : json(nullptr);
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(row);
  }
  return {{"rows", rows}, {"trend_ok", t.trend_ok}, {"final_distance", t.final_distance}};
}

inline json to_json(const ScoreCltTable& t) {
  return {{"replications", t.replications},   {"n", t.n},
          {"failures", t.failures},           {"distance", t.distance},
          {"variance_ratios", to_json(t.variance_ratios)},
          {"ratio_band", t.ratio_band},       {"mean_z", to_json(t.mean_z)},
          {"ratios_ok", t.ratios_ok},         {"means_ok", t.means_ok},
          {"covariance", to_json(t.covariance)}};
}

inline json to_json(const ConsistencyTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"n", r.n}, {"converged", r.converged}, {"median_sup_error", r.median_sup_error}});
  return {{"rows", rows}, {"strictly_decreasing", t.strictly_decreasing}};
}

inline json to_json(const McReport& m) {
  json est = json::object();
  for (const EstimatorResult& r : m.estimators) {
    est[to_string(r.estimator)] = {{"replications", m.replications},
                                   {"converged", r.converged},
                                   {"failures", r.failures},
                                   {"trace", r.scaled_cov.trace()},
                                   {"scaled_cov", to_json(r.scaled_cov)}};
  }
  return {{"n", m.n},
          {"replications", m.replications},
          {"warm_start", {{"policy", "w0_plus_gaussian"}, {"sd", m.perturbation}}},
          {"w0", to_json(m.w0.values)},
          {"gamma0", to_json(m.gamma0)},
          {"i0", to_json(m.i0)},
          {"i0_inv", to_json(m.i0_inv)},
          {"estimators", est},
          {"summary",
           {{"logdet_vs_i0inv", m.dist_logdet_i0inv},
            {"logdet_vs_gls", m.dist_logdet_gls},
            {"efficiency_ratio", m.efficiency_ratio},
            {"efficiency_se", m.efficiency_se},
            {"paired_replications", m.common},
            {"failure_rate", m.failure_rate}}}};
}

/// One row per replication per estimator.
inline std::string mc_csv(const McReport& m) {
  const Eigen::Index p = m.w0.size();
  std::string s = "replication,estimator,converged";
  for (Eigen::Index k = 0; k < p; ++k) s += ",w" + std::to_string(k + 1);
  s += ",cost\n";
  for (int i = 0; i < m.replications; ++i) {
    for (const EstimatorResult& r : m.estimators) {
      const Replicate& f = r.fits[i];
      s += std::to_string(i) + "," + to_string(r.estimator) + "," + (f.converged ? "1" : "0");
      for (Eigen::Index k = 0; k < p; ++k) s += "," + (f.w.size() == p ? format_double(f.w[k]) : std::string("nan"));
      s += "," + format_double(f.cost) + "\n";
    }
  }
  return s;
}

}  // namespace mlpreg
