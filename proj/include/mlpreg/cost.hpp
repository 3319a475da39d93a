#pragma once

// Costs over W for the regression Y = F_W(Z) + eps:
//
//   LogDet  U_n(W) = log det Gamma_n(W),  Gamma_n(W) = (1/n) sum_t r_t r_t^T
//   Ols     (1/n) sum_t |r_t|^2
//   Gls     (1/n) sum_t r_t^T Gamma^{-1} r_t   (Gamma fixed)
//
// with r_t = Y_t - F_W(Z_t). All three gradients share one form,
// dC/dW_k = -(2/n) sum_t (dF/dW_k)^T v_t, where v_t = r_t (Ols), Gamma^{-1} r_t
// (Gls) or Gamma_n(W)^{-1} r_t (LogDet; this equals 2 tr(Gamma_n^{-1} A_n(W_k))).
// Gamma^{-1} is only ever applied through Cholesky solves.

#include <optional>
#include <variant>
#include <vector>

#include "mlpreg/dataset.hpp"
#include "mlpreg/mlp.hpp"
#include "mlpreg/spd.hpp"

namespace mlpreg {

struct LogDetCost {
  double jitter = 0.0;  // added to the diagonal of Gamma_n(W)
};
struct OlsCost {};
struct GlsCost {
  SpdMatrix weight;  // Gamma; the cost uses its inverse
};

using CostKind = std::variant<LogDetCost, OlsCost, GlsCost>;

inline std::string cost_name(const CostKind& kind) {
  switch (kind.index()) {
    case 0:
      return "logdet";
    case 1:
      return "ols";
    default:
      return "gls";
  }
}

struct DerivBundle {
  double cost = 0.0;
  Vector gradient;
  std::optional<Matrix> hessian;
};

/// The three pieces of the log-det Hessian, each p x p:
///   a_term(k,l) = -2 tr(G A_l G A_k) - 2 tr(G A_l^T G A_k)   (from dG^{-1}/dW_l)
///   b_term(k,l) =  2 tr(G B_n(W_k, W_l))
///   c_term(k,l) =  2 tr(G C_n(W_k, W_l))
/// with G = Gamma_n(W)^{-1}.
struct HessianTerms {
  Matrix a_term, b_term, c_term;
  Matrix total() const { return a_term + b_term + c_term; }
};

namespace detail {

inline void check_data(const ParamVector& w, const Dataset& data) {
  data.validate();
  require_dims(data.q() == w.arch.input_dim,
               "dataset has q=" + std::to_string(data.q()) + ", architecture expects " +
                   std::to_string(w.arch.input_dim));
  require_dims(data.d() == w.arch.output_dim,
               "dataset has d=" + std::to_string(data.d()) + ", architecture expects " +
                   std::to_string(w.arch.output_dim));
  require_dims(w.values.size() == w.arch.param_count(), "ParamVector length mismatch");
}

/// Residuals and, per cost, the weighted residuals V (row t = v_t) and value.
struct Weighted {
  RowMatrix residuals;
  RowMatrix v;
  double cost = 0.0;
  std::optional<SpdMatrix> gamma;  // Gamma_n(W) for LogDet
};

}  // namespace detail

/// Row t = Y_t - F_W(Z_t).
inline RowMatrix residuals(const ParamVector& w, const Dataset& data) {
  detail::check_data(w, data);
  MlpEvaluator ev(w);
  RowMatrix r(data.n(), data.d());
  for (Eigen::Index t = 0; t < data.n(); ++t) {
    std::span<double> out{r.data() + t * r.cols(), static_cast<size_t>(r.cols())};
    ev.forward(detail::row_span(data.inputs, t), out);
    for (Eigen::Index j = 0; j < r.cols(); ++j) out[j] = data.targets(t, j) - out[j];
  }
  return r;
}

/// (1/n) sum_t r_t r_t^T + jitter I. Throws SingularCovariance when the
/// result is not positive definite.
inline SpdMatrix empirical_cov(const RowMatrix& r, double jitter = 0.0) {
  if (r.rows() < 1) throw InvalidArgument("empirical_cov: need at least one residual");
  if (!(jitter >= 0.0)) throw InvalidArgument("empirical_cov: jitter must be >= 0");
  const Eigen::Index d = r.cols();
  Matrix s = Matrix::Zero(d, d);
  for (Eigen::Index t = 0; t < r.rows(); ++t) {
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) s(i, j) += r(t, i) * r(t, j);
  }
  s /= static_cast<double>(r.rows());
  for (Eigen::Index i = 0; i < d; ++i) {
    s(i, i) += jitter;
    for (Eigen::Index j = 0; j < i; ++j) s(j, i) = s(i, j);
  }
  try {
    return SpdMatrix(s);
  } catch (const NotPositiveDefinite&) {
    throw SingularCovariance("residual covariance is singular (exact fit or n <= d)");
  }
}

namespace detail {

inline Weighted weigh(const CostKind& kind, const ParamVector& w, const Dataset& data) {
  Weighted out;
  out.residuals = residuals(w, data);
  const RowMatrix& r = out.residuals;
  const double n = static_cast<double>(r.rows());
  if (const auto* ld = std::get_if<LogDetCost>(&kind)) {
    if (r.rows() <= r.cols())
      throw SingularCovariance("log-det cost needs n > d (n=" + std::to_string(r.rows()) +
                               ", d=" + std::to_string(r.cols()) + ")");
    out.gamma = empirical_cov(r, ld->jitter);
    out.v = out.gamma->solve(r.transpose()).transpose();
    out.cost = out.gamma->logdet();
  } else if (const auto* gls = std::get_if<GlsCost>(&kind)) {
    require_dims(gls->weight.dim() == r.cols(), "GLS weight has dimension " +
                                                    std::to_string(gls->weight.dim()) +
                                                    ", expected " + std::to_string(r.cols()));
    out.v = gls->weight.solve(r.transpose()).transpose();
    out.cost = r.cwiseProduct(out.v).sum() / n;
  } else {
    out.v = r;
    out.cost = r.squaredNorm() / n;
  }
  return out;
}

inline Vector gradient_from(const ParamVector& w, const Dataset& data, const RowMatrix& v) {
  MlpEvaluator ev(w);
  const int p = ev.p();
  Vector g = Vector::Zero(p);
  std::vector<double> gt(p);
  for (Eigen::Index t = 0; t < data.n(); ++t) {
    ev.vjp(row_span(data.inputs, t), row_span(v, t), gt);
    for (int k = 0; k < p; ++k) g[k] += gt[k];
  }
  return (-2.0 / static_cast<double>(data.n())) * g;
}

}  // namespace detail

inline double cost(const CostKind& kind, const ParamVector& w, const Dataset& data) {
  return detail::weigh(kind, w, data).cost;
}

inline Vector gradient(const CostKind& kind, const ParamVector& w, const Dataset& data) {
  const auto wt = detail::weigh(kind, w, data);
  return detail::gradient_from(w, data, wt.v);
}

/// A_n(W_k) = (1/n) sum_t -(dF/dW_k)(z_t) r_t^T.
inline Matrix a_matrix(const ParamVector& w, const Dataset& data, Eigen::Index k) {
  detail::check_data(w, data);
  detail::check_index(w, k);
  MlpEvaluator ev(w);
  const Eigen::Index d = data.d();
  Matrix a = Matrix::Zero(d, d), jac;
  Vector f(d);
  for (Eigen::Index t = 0; t < data.n(); ++t) {
    ev.jacobian(detail::row_span(data.inputs, t), jac, {f.data(), static_cast<size_t>(d)});
    const Vector r = data.targets.row(t).transpose() - f;
    a.noalias() -= jac.row(k).transpose() * r.transpose();
  }
  return a / static_cast<double>(data.n());
}

/// B_n(W_k, W_l) = (1/n) sum_t (dF/dW_k)(dF/dW_l)^T.
inline Matrix b_matrix(const ParamVector& w, const Dataset& data, Eigen::Index k, Eigen::Index l) {
  detail::check_data(w, data);
  detail::check_index(w, k);
  detail::check_index(w, l);
  MlpEvaluator ev(w);
  const Eigen::Index d = data.d();
  Matrix b = Matrix::Zero(d, d), jac;
  Vector f(d);
  for (Eigen::Index t = 0; t < data.n(); ++t) {
    ev.jacobian(detail::row_span(data.inputs, t), jac, {f.data(), static_cast<size_t>(d)});
    b.noalias() += jac.row(k).transpose() * jac.row(l);
  }
  return b / static_cast<double>(data.n());
}

/// C_n(W_k, W_l) = (1/n) sum_t -r_t (d2F/dW_k dW_l)^T.
inline Matrix c_matrix(const ParamVector& w, const Dataset& data, Eigen::Index k, Eigen::Index l) {
  detail::check_data(w, data);
  detail::check_index(w, k);
  detail::check_index(w, l);
  const Eigen::Index d = data.d();
  Matrix c = Matrix::Zero(d, d);
  if (w.arch.in_output_layer(static_cast<int>(k)) && w.arch.in_output_layer(static_cast<int>(l)))
    return c;
  MlpEvaluator ev(w);
  Matrix slice;
  Vector f(d);
  for (Eigen::Index t = 0; t < data.n(); ++t) {
    const auto z = detail::row_span(data.inputs, t);
    ev.forward(z, {f.data(), static_cast<size_t>(d)});
    ev.jacobian_tangent(z, static_cast<int>(l), slice);
    const Vector r = data.targets.row(t).transpose() - f;
    c.noalias() -= r * slice.row(k);
  }
  return c / static_cast<double>(data.n());
}

/// The three Hessian pieces of U_n at W (before symmetrization).
inline HessianTerms hessian_terms(const ParamVector& w, const Dataset& data, double jitter = 0.0) {
  const auto wt = detail::weigh(LogDetCost{jitter}, w, data);
  const SpdMatrix& gamma = *wt.gamma;
  const Eigen::Index n = data.n(), d = data.d();
  MlpEvaluator ev(w);
  const int p = ev.p();
  const Architecture& arch = w.arch;

  std::vector<Matrix> a(p, Matrix::Zero(d, d));
  Matrix b_term = Matrix::Zero(p, p);
  Matrix c_term = Matrix::Zero(p, p);
  Matrix jac;
  Vector f(d);
  std::vector<double> column(p);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto z = detail::row_span(data.inputs, t);
    ev.jacobian(z, jac, {f.data(), static_cast<size_t>(d)});
    const auto r = wt.residuals.row(t);
    for (int k = 0; k < p; ++k) a[k].noalias() -= jac.row(k).transpose() * r;
    // J G J^T through the half solve K = L^{-1} J^T.
    const Matrix half = gamma.half_solve(jac.transpose());
    b_term.noalias() += half.transpose() * half;
    // Output biases enter F affinely, so their second-derivative columns vanish.
    const auto v = detail::row_span(wt.v, t);
    for (int l = 0; l < p; ++l) {
      if (arch.is_output_bias(l)) continue;
      ev.vjp_tangent(z, v, l, column);
      for (int k = 0; k < p; ++k) c_term(k, l) += column[k];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  b_term *= 2.0 * inv_n;
  c_term *= -2.0 * inv_n;

  std::vector<Matrix> ga(p), gat(p);
  for (int k = 0; k < p; ++k) {
    a[k] *= inv_n;
    ga[k] = gamma.solve(a[k]);
    gat[k] = gamma.solve(a[k].transpose());
  }
  Matrix a_term(p, p);
  for (int k = 0; k < p; ++k)
    for (int l = 0; l < p; ++l)
      a_term(k, l) = -2.0 * trace_product(ga[l], ga[k]) - 2.0 * trace_product(gat[l], ga[k]);

  return {std::move(a_term), std::move(b_term), std::move(c_term)};
}

/// Exact Hessian of the log-det cost, symmetrized as (H + H^T)/2.
inline Matrix hessian(const CostKind& kind, const ParamVector& w, const Dataset& data) {
  const auto* ld = std::get_if<LogDetCost>(&kind);
  if (ld == nullptr) throw InvalidArgument("analytic Hessian is only available for the log-det cost");
  const Matrix h = hessian_terms(w, data, ld->jitter).total();
  return 0.5 * (h + h.transpose());
}

/// Cost, gradient and (LogDet only, on request) Hessian in one pass.
inline DerivBundle evaluate(const CostKind& kind, const ParamVector& w, const Dataset& data,
                            bool with_hessian = false) {
  const auto wt = detail::weigh(kind, w, data);
  DerivBundle out;
  out.cost = wt.cost;
  out.gradient = detail::gradient_from(w, data, wt.v);
  if (with_hessian) out.hessian = hessian(kind, w, data);
  return out;
}

}  // namespace mlpreg
