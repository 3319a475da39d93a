// mlpreg: generate | fit | gradcheck | montecarlo
//
// Exit codes: 0 ok, 1 failure (internal error or a tolerance band missed),
// 2 non-convergence, 3 config / usage / parse error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "mlpreg/asymptotics.hpp"
#include "mlpreg/config.hpp"
#include "mlpreg/gradcheck.hpp"
#include "mlpreg/io.hpp"
#include "mlpreg/report.hpp"

namespace fs = std::filesystem;
using namespace mlpreg;

namespace {

constexpr int kOk = 0, kFailure = 1, kNoConvergence = 2, kUsage = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Short rendering for human-facing lines; files use format_double.
std::string show(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir + "': " + ec.message());
}

// --- generate ---------------------------------------------------------------

int cmd_generate(const std::string& config_path) {
  const ExperimentConfig cfg = read_experiment(config_path);
  if (!cfg.data_n) throw ConfigError(config_path + ": generate needs a [data] section with n and seed");
  const GenSpec spec = cfg.gen_spec(*cfg.data_n, *cfg.data_seed);
  const Dataset data = sample_dataset(spec);
  ensure_dir(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  write_file((dir / "data.csv").string(), dataset_csv(data));
  write_file((dir / "truth.json").string(), dump(truth_json(spec.w0, spec.noise.gamma0, spec.seed)));
  std::cout << "wrote " << (dir / "data.csv").string() << " (" << data.n() << " rows) and "
            << (dir / "truth.json").string() << "\n";
  return kOk;
}

// --- fit --------------------------------------------------------------------

struct FitArgs {
  std::string data, cost = "logdet", gamma, method = "quasi_newton", warm_start;
  std::string report = "fit_report.json", weights = "weights.json";
  std::vector<int> hidden;
  int q = 0, d = 0, restarts = 10, max_iters = 5000;
  double grad_tol = 1e-6, cost_tol = 1e-10;
  std::uint64_t seed = 0;
};

int cmd_fit(const FitArgs& a) {
  const Dataset data = read_dataset_csv(a.data);
  if (a.q && a.q != data.q())
    throw UsageError("--q " + std::to_string(a.q) + " but the dataset has q=" + std::to_string(data.q()));
  if (a.d && a.d != data.d())
    throw UsageError("--d " + std::to_string(a.d) + " but the dataset has d=" + std::to_string(data.d()));
  Architecture arch;
  try {
    arch = Architecture(static_cast<int>(data.q()), a.hidden, static_cast<int>(data.d()));
    arch.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  CostKind kind;
  if (a.cost == "logdet") {
    if (!a.gamma.empty()) throw UsageError("--gamma only applies to --cost gls");
    kind = LogDetCost{};
  } else if (a.cost == "ols") {
    if (!a.gamma.empty()) throw UsageError("--gamma only applies to --cost gls");
    kind = OlsCost{};
  } else if (a.cost == "gls") {
    if (a.gamma.empty()) throw UsageError("--cost gls requires --gamma FILE");
    const SpdMatrix g = read_gamma(a.gamma);
    if (g.dim() != data.d()) throw UsageError("--gamma is " + std::to_string(g.dim()) + "x" +
                                              std::to_string(g.dim()) + ", dataset has d=" +
                                              std::to_string(data.d()));
    kind = GlsCost{g};
  } else {
    throw UsageError("--cost must be logdet, ols or gls");
  }

  FitConfig cfg;
  try {
    cfg.method = method_from_string(a.method);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  cfg.grad_tol = a.grad_tol;
  cfg.cost_tol = a.cost_tol;
  cfg.max_iters = a.max_iters;
  cfg.restarts = a.restarts;
  cfg.seed = a.seed;
  if (!a.warm_start.empty()) {
    cfg.warm_start = read_weights(a.warm_start);
    if (!(cfg.warm_start->arch == arch)) throw UsageError("--warm-start architecture does not match");
  }
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  FitReport rep;
  try {
    rep = minimize(kind, data, arch, cfg);
  } catch (const RestartsFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& r : e.log()) std::cerr << "  restart " << r.restart << ": " << r.error << "\n";
    return kNoConvergence;
  }
  json out = to_json(rep, cost_name(kind));
  out["data"] = {{"n", data.n()}, {"q", data.q()}, {"d", data.d()}};
  out["config"] = {{"method", to_string(cfg.method)}, {"grad_tol", cfg.grad_tol}, {"cost_tol", cfg.cost_tol},
                   {"max_iters", cfg.max_iters},      {"restarts", cfg.restarts}, {"seed", cfg.seed},
                   {"warm_start", !a.warm_start.empty()}};
  out["provenance"] = provenance();
  write_file(a.report, dump(out));
  write_file(a.weights, dump(weights_json(rep.w_hat)));
  std::cout << "cost " << format_double(rep.final_cost) << "  |grad|_inf " << format_double(rep.grad_norm)
            << "  iterations " << rep.iterations << "  " << (rep.converged ? "converged" : "NOT converged")
            << " (" << rep.stop_reason << ")\n";
  return rep.converged ? kOk : kNoConvergence;
}

// --- gradcheck --------------------------------------------------------------

int cmd_gradcheck(GradcheckConfig cfg, int q, const std::vector<int>& hidden, int d) {
  if (q || d || !hidden.empty()) {
    if (!q || !d || hidden.empty()) throw UsageError("--q, --hidden and --d go together");
    try {
      Architecture a(q, hidden, d);
      a.validate();
      cfg.arch = a;
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  }
  if (cfg.trials < 1) throw UsageError("--trials must be >= 1");
  const GradcheckResult r = run_gradcheck(cfg);
  std::cout << "trials " << r.trials << "\n"
            << "gradient max relative error " << format_double(r.max_grad_rel_err) << " (tol "
            << show(cfg.grad_tol) << ")\n"
            << "hessian max absolute error " << format_double(r.max_hess_abs_err) << " (tol "
            << show(cfg.hess_tol) << ")\n"
            << (r.ok ? "OK" : "FAILED") << "\n";
  return r.ok ? kOk : kFailure;
}

// --- montecarlo -------------------------------------------------------------

class Manifest {
 public:
  explicit Manifest(fs::path dir) : dir_(std::move(dir)) { flush("incomplete"); }
  void add(const std::string& name, const std::string& content) {
    write_file((dir_ / name).string(), content);
    files_.push_back(name);
    flush("incomplete");
  }
  void flush(const std::string& status, const std::string& note = "") {
    std::string s = "status: " + status + "\n";
    if (!note.empty()) s += "error: " + note + "\n";
    for (const auto& f : files_) s += "file: " + f + "\n";
    write_file((dir_ / "MANIFEST").string(), s);
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

struct Check {
  std::string name;
  bool pass;
  std::string detail;
};

int cmd_montecarlo(const std::string& config_path, int threads, const std::string& out_override) {
  const ExperimentConfig cfg = read_experiment(config_path);
  if (!cfg.study) throw ConfigError(config_path + ": montecarlo needs a [study] section");
  if (threads < 1) throw UsageError("--threads must be >= 1");
  const StudySection& st = *cfg.study;
  const Bands& b = cfg.bands;
  const std::string out_dir = out_override.empty() ? cfg.output_dir : out_override;
  ensure_dir(out_dir);
  Manifest manifest{fs::path(out_dir)};

  try {
    const GenSpec spec = cfg.gen_spec(st.n, st.seed);
    const ParamVector& w0 = spec.w0;
    const InfoMatrix ref = reference_i0(w0, spec.noise.gamma0, st.n_ref, st.seed);
    std::vector<Check> checks;
    auto fmt = [](double x) { return show(x); };

    const HessianLimitTable hl = verify_hessian_limit(w0, spec, st.hessian_grid, ref);
    manifest.add("hessian_limit.json", dump(to_json(hl)));
    checks.push_back({"hessian_limit", hl.final_distance < b.hessian_final && hl.trend_ok,
                      "final distance " + fmt(hl.final_distance) + " < " + fmt(b.hessian_final) +
                          ", trend " + (hl.trend_ok ? "ok" : "broken")});
    std::cerr << "hessian limit done\n";

    const ScoreCltTable sc = verify_score_clt(w0, spec, st.score_replications, st.score_n, ref, threads);
    manifest.add("score_clt.json", dump(to_json(sc)));
    checks.push_back({"score_clt", sc.distance < b.score_distance && sc.ratios_ok && sc.means_ok,
                      "distance " + fmt(sc.distance) + " < " + fmt(b.score_distance) + ", variance ratios " +
                          (sc.ratios_ok ? "in" : "OUT OF") + " band, means " + (sc.means_ok ? "ok" : "off")});
    std::cerr << "score clt done\n";

    const McReport mc = run_comparison(spec, st.n, st.replications, cfg.fit, ref, threads, st.perturbation);
    manifest.add("comparison.json", dump(to_json(mc)));
    manifest.add("comparison.csv", mc_csv(mc));
    checks.push_back({"logdet_vs_i0inv", mc.dist_logdet_i0inv < b.cov_vs_i0inv,
                      fmt(mc.dist_logdet_i0inv) + " < " + fmt(b.cov_vs_i0inv)});
    checks.push_back({"logdet_vs_gls", mc.dist_logdet_gls < b.cov_vs_gls,
                      fmt(mc.dist_logdet_gls) + " < " + fmt(b.cov_vs_gls)});
    const double zeff = (mc.efficiency_ratio - 1.0) / mc.efficiency_se;
    const bool eff_ok = b.efficiency == EfficiencyExpectation::Gain ? zeff > b.efficiency_sigmas
                                                                    : std::abs(zeff) <= b.efficiency_sigmas;
    checks.push_back({"efficiency", eff_ok,
                      "ratio " + fmt(mc.efficiency_ratio) + " se " + fmt(mc.efficiency_se) + ", (ratio-1)/se " +
                          fmt(zeff) + (b.efficiency == EfficiencyExpectation::Gain ? " > " : " within +-") +
                          fmt(b.efficiency_sigmas)});
    checks.push_back({"failure_rate", mc.failure_rate <= b.max_failure_rate,
                      fmt(mc.failure_rate) + " <= " + fmt(b.max_failure_rate)});
    std::cerr << "comparison done\n";

    json report = {{"provenance", provenance()}, {"config", cfg.echo}};
    report["hessian_limit"] = to_json(hl);
    report["score_clt"] = to_json(sc);
    report["comparison"] = to_json(mc);
    if (st.consistency_replications > 0) {
      const ConsistencyTable ct =
          consistency_trend(spec, st.consistency_n, st.consistency_replications, cfg.fit, threads, st.perturbation);
      manifest.add("consistency.json", dump(to_json(ct)));
      std::string medians;
      for (const auto& r : ct.rows) medians += (medians.empty() ? "" : " > ") + fmt(r.median_sup_error);
      checks.push_back({"consistency", ct.strictly_decreasing, "medians " + medians});
      report["consistency"] = to_json(ct);
    }

    bool all = true;
    json jc = json::array();
    for (const Check& c : checks) {
      all = all && c.pass;
      jc.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    }
    report["checks"] = jc;
    report["pass"] = all;
    manifest.add("report.json", dump(report));
    manifest.flush("complete");
    return all ? kOk : kFailure;
  } catch (const std::exception& e) {
    manifest.flush("incomplete", e.what());
    throw;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MLP regression with the log-determinant cost"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string gen_config;
  auto* gen = app.add_subcommand("generate", "sample a dataset CSV and a truth JSON from a config");
  gen->add_option("--config", gen_config, "config file")->required();

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "fit an MLP to a dataset CSV");
  fit->add_option("--data", fa.data, "dataset CSV (z1..zq,y1..yd)")->required();
  fit->add_option("--hidden", fa.hidden, "hidden layer sizes, e.g. --hidden 2")->required()->delimiter(',');
  fit->add_option("--q", fa.q, "input dimension (checked against the data)");
  fit->add_option("--d", fa.d, "output dimension (checked against the data)");
  fit->add_option("--cost", fa.cost, "logdet | ols | gls")->capture_default_str();
  fit->add_option("--gamma", fa.gamma, "GLS weight matrix JSON (array of rows, or an object with gamma0)");
  fit->add_option("--method", fa.method, "quasi_newton | damped_newton")->capture_default_str();
  fit->add_option("--restarts", fa.restarts)->capture_default_str();
  fit->add_option("--seed", fa.seed)->capture_default_str();
  fit->add_option("--grad-tol", fa.grad_tol)->capture_default_str();
  fit->add_option("--cost-tol", fa.cost_tol)->capture_default_str();
  fit->add_option("--max-iters", fa.max_iters)->capture_default_str();
  fit->add_option("--warm-start", fa.warm_start, "weights JSON used as restart 0");
  fit->add_option("--report", fa.report, "fit report JSON path")->capture_default_str();
  fit->add_option("--weights", fa.weights, "fitted weights JSON path")->capture_default_str();

  GradcheckConfig gc;
  int gq = 0, gd = 0;
  std::vector<int> ghidden;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference audit of the gradient and Hessian");
  grad->add_option("--seed", gc.seed)->capture_default_str();
  grad->add_option("--trials", gc.trials)->capture_default_str();
  grad->add_option("--q", gq, "fix the input dimension");
  grad->add_option("--hidden", ghidden, "fix the hidden sizes")->delimiter(',');
  grad->add_option("--d", gd, "fix the output dimension");
  grad->add_option("--corrupt-gradient", gc.corrupt_gradient)->group("");

  std::string mc_config, mc_out;
  int threads = 1;
  auto* mc = app.add_subcommand("montecarlo", "asymptotic checks and estimator comparison with tolerance bands");
  mc->add_option("--config", mc_config, "config file")->required();
  mc->add_option("--threads", threads, "worker cap")->capture_default_str();
  mc->add_option("--out-dir", mc_out, "overrides [output] dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_generate(gen_config);
    if (*fit) return cmd_fit(fa);
    if (*grad) return cmd_gradcheck(gc, gq, ghidden, gd);
    if (*mc) return cmd_montecarlo(mc_config, threads, mc_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
