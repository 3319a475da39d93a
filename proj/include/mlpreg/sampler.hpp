#pragma once

// Synthetic data for Y_t = F_{W0}(Z_t) + eps_t with Z_t ~ N(0, I_q) and
// eps_t ~ N(0, Gamma0). Inputs and noise come from separate substreams.

#include <cmath>
#include <cstdint>
#include <string>

#include "mlpreg/dataset.hpp"
#include "mlpreg/mlp.hpp"
#include "mlpreg/rng.hpp"
#include "mlpreg/spd.hpp"

namespace mlpreg {

enum class NoiseFamily { Gaussian };
enum class InputLaw { StandardGaussian };

struct NoiseSpec {
  SpdMatrix gamma0;
  NoiseFamily family = NoiseFamily::Gaussian;
};

struct GenSpec {
  ParamVector w0;
  NoiseSpec noise;
  InputLaw input_law = InputLaw::StandardGaussian;
  Eigen::Index n = 0;
  std::uint64_t seed = 0;
};

enum class GammaKind { Identity, Equicorrelated, ArLike };

inline std::string to_string(GammaKind k) {
  switch (k) {
    case GammaKind::Identity:
      return "identity";
    case GammaKind::Equicorrelated:
      return "equicorrelated";
    case GammaKind::ArLike:
      return "arlike";
  }
  return "?";
}

inline GammaKind gamma_kind_from_string(const std::string& s) {
  if (s == "identity") return GammaKind::Identity;
  if (s == "equicorrelated") return GammaKind::Equicorrelated;
  if (s == "arlike") return GammaKind::ArLike;
  throw InvalidArgument("unknown gamma0 kind '" + s + "' (identity|equicorrelated|arlike)");
}

/// Identity: scale I. Equicorrelated: scale ((1-rho) I + rho J).
/// ArLike: scale rho^|i-j|.
inline SpdMatrix make_gamma0(GammaKind kind, int d, double scale, double rho = 0.0) {
  if (d < 1) throw InvalidArgument("make_gamma0: d must be >= 1");
  if (!(scale > 0.0)) throw NotPositiveDefinite("make_gamma0: scale must be > 0");
  Matrix g(d, d);
  switch (kind) {
    case GammaKind::Identity:
      g.setIdentity();
      break;
    case GammaKind::Equicorrelated:
      if (!(rho < 1.0) || (d > 1 && !(rho > -1.0 / (d - 1))))
        throw NotPositiveDefinite("equicorrelated rho=" + std::to_string(rho) +
                                  " outside (-1/(d-1), 1)");
      g.setConstant(rho);
      g.diagonal().setOnes();
      break;
    case GammaKind::ArLike:
      if (!(std::abs(rho) < 1.0))
        throw NotPositiveDefinite("AR-like rho=" + std::to_string(rho) + " needs |rho| < 1");
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) g(i, j) = std::pow(rho, std::abs(i - j));
      break;
  }
  return SpdMatrix(scale * g);
}

/// n standard-Gaussian input rows from the input substream of `seed`.
inline RowMatrix sample_inputs(Eigen::Index n, int q, std::uint64_t seed) {
  Rng rng(seed, {stream::kInputs});
  RowMatrix z(n, q);
  for (Eigen::Index t = 0; t < n; ++t)
    for (int i = 0; i < q; ++i) z(t, i) = rng.normal();
  return z;
}

inline Dataset sample_dataset(const GenSpec& spec) {
  const Architecture& arch = spec.w0.arch;
  if (spec.n < 1) throw InvalidArgument("sample_dataset: n must be >= 1");
  detail::require_dims(spec.noise.gamma0.dim() == arch.output_dim,
                       "sample_dataset: gamma0 dimension does not match output dim");
  const int d = arch.output_dim;
  RowMatrix z = sample_inputs(spec.n, arch.input_dim, spec.seed);
  RowMatrix y(spec.n, d);
  const Matrix l = spec.noise.gamma0.chol();
  Rng noise(spec.seed, {stream::kNoise});
  MlpEvaluator ev(spec.w0);
  Vector u(d), f(d);
  for (Eigen::Index t = 0; t < spec.n; ++t) {
    ev.forward(detail::row_span(z, t), {f.data(), static_cast<size_t>(d)});
    for (int j = 0; j < d; ++j) u[j] = noise.normal();
    y.row(t) = (f + l.triangularView<Eigen::Lower>() * u).transpose();
  }
  return Dataset(std::move(z), std::move(y));
}

}  // namespace mlpreg
