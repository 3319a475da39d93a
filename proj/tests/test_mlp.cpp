#include <gtest/gtest.h>

#include <cmath>

#include "mlpreg/mlp.hpp"
#include "oracles.hpp"

namespace mlpreg {
namespace {

using testing::fd_jacobian_of;
using testing::naive_forward;
using testing::rel_err;

ParamVector unit_net() {
  // q=1, h=[1], d=1: F(z) = 1 * tanh(1 * z + 0) + 0
  Architecture arch(1, {1}, 1);
  ParamVector w(arch);
  w[arch.weight_index(0, 0, 0)] = 1.0;
  w[arch.weight_index(1, 0, 0)] = 1.0;
  return w;
}

ParamVector random_weights(const Architecture& arch, Rng& rng, double bound) {
  ParamVector w(arch);
  for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = rng.uniform(-bound, bound);
  return w;
}

Vector random_input(Rng& rng, int q, double bound) {
  Vector z(q);
  for (int i = 0; i < q; ++i) z[i] = rng.uniform(-bound, bound);
  return z;
}

TEST(Architecture, ParamCountAndLayout) {
  Architecture a(3, {4, 2}, 2);
  EXPECT_EQ(a.param_count(), (3 + 1) * 4 + (4 + 1) * 2 + (2 + 1) * 2);
  EXPECT_EQ(a.weight_index(0, 0, 0), 0);
  EXPECT_EQ(a.bias_index(0, 0), 12);
  EXPECT_EQ(a.layer_offset(1), 16);
  EXPECT_EQ(a.weight_index(1, 1, 3), 16 + 4 + 3);
  EXPECT_TRUE(a.is_output_bias(a.param_count() - 1));
  EXPECT_FALSE(a.is_output_bias(a.weight_index(2, 1, 1)));
  EXPECT_TRUE(a.in_output_layer(a.weight_index(2, 0, 0)));
  EXPECT_THROW(Architecture(0, {2}, 1), InvalidArgument);
  EXPECT_THROW(Architecture(1, {0}, 1), InvalidArgument);
}

TEST(Forward, KnownValues) {
  Architecture arch(2, {3}, 2);
  const Vector out = forward(ParamVector(arch), Vector::Ones(2));
  EXPECT_EQ(out, Vector::Zero(2));

  const ParamVector w = unit_net();
  EXPECT_EQ(forward(w, Vector::Zero(1))[0], 0.0);
  EXPECT_NEAR(forward(w, Vector::Ones(1))[0], 0.7615941559557649, 1e-15);
  EXPECT_THROW(forward(w, Vector::Zero(2)), DimensionMismatch);
}

TEST(Forward, MatchesNaiveReference) {
  Rng rng(21);
  Architecture arch(3, {4, 3}, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const ParamVector w = random_weights(arch, rng, 1.0);
    const Vector z = random_input(rng, 3, 2.0);
    EXPECT_LT((forward(w, z) - naive_forward(w, z)).norm(), 1e-14);
  }
}

TEST(Jacobian, OutputBiasRowsAreUnitVectors) {
  Rng rng(22);
  Architecture arch(2, {3}, 3);
  const ParamVector w = random_weights(arch, rng, 1.0);
  const Matrix jac = jacobian(w, random_input(rng, 2, 3.0));
  ASSERT_EQ(jac.rows(), arch.param_count());
  ASSERT_EQ(jac.cols(), 3);
  for (int j = 0; j < 3; ++j)
    EXPECT_EQ(jac.row(arch.bias_index(1, j)).transpose(), Vector::Unit(3, j));
}

TEST(Jacobian, ZeroWeightsKillOutputWeightRows) {
  Architecture arch(2, {3}, 2);
  const Matrix jac = jacobian(ParamVector(arch), Vector::Ones(2));
  for (int i = 0; i < 2; ++i)
    for (int h = 0; h < 3; ++h) EXPECT_EQ(jac.row(arch.weight_index(1, i, h)).norm(), 0.0);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  Rng rng(23);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Architecture arch(1 + trial % 3, {2 + trial % 2}, 1 + (trial / 3) % 3);
    const ParamVector w = random_weights(arch, rng, 2.0);
    const Vector z = random_input(rng, arch.input_dim, 3.0);
    const Matrix jac = jacobian(w, z);
    const Matrix fd = fd_jacobian_of([&](const ParamVector& x) { return naive_forward(x, z); }, w, 1e-6);
    for (Eigen::Index k = 0; k < jac.rows(); ++k)
      for (Eigen::Index j = 0; j < jac.cols(); ++j) worst = std::max(worst, rel_err(jac(k, j), fd(j, k)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(SecondDerivative, OutputLayerPairsVanish) {
  Rng rng(24);
  Architecture arch(2, {3}, 2);
  const ParamVector w = random_weights(arch, rng, 1.0);
  const Vector z = random_input(rng, 2, 2.0);
  const int b0 = arch.bias_index(1, 0), b1 = arch.bias_index(1, 1);
  const int wout = arch.weight_index(1, 1, 2);
  EXPECT_EQ(second_derivative(w, z, b0, b1).norm(), 0.0);
  EXPECT_EQ(second_derivative(w, z, wout, wout).norm(), 0.0);
  EXPECT_THROW(second_derivative(w, z, arch.param_count(), 0), IndexOutOfRange);
  EXPECT_THROW(second_derivative(w, z, 0, -1), IndexOutOfRange);
  EXPECT_THROW(second_derivative(w, Vector::Zero(3), 0, 0), DimensionMismatch);
}

TEST(SecondDerivative, MatchesFiniteDifferenceOfJacobianAndIsSymmetric) {
  Rng rng(25);
  for (int trial = 0; trial < 20; ++trial) {
    Architecture arch(1 + trial % 3, {2 + trial % 2}, 1 + trial % 2);
    const ParamVector w = random_weights(arch, rng, 2.0);
    const Vector z = random_input(rng, arch.input_dim, 3.0);
    const int p = arch.param_count(), d = arch.output_dim;
    for (int l = 0; l < p; ++l) {
      const Matrix fd = fd_jacobian_of(
          [&](const ParamVector& x) {
            const Matrix j = jacobian(x, z);
            return Vector(Eigen::Map<const Vector>(j.data(), j.size()));
          },
          w, 1e-5);
      for (int k = 0; k < p; ++k) {
        const Vector kl = second_derivative(w, z, k, l);
        const Vector lk = second_derivative(w, z, l, k);
        EXPECT_LT((kl - lk).cwiseAbs().maxCoeff(), 1e-12);
        for (int j = 0; j < d; ++j) EXPECT_NEAR(kl[j], fd(j * p + k, l), 1e-5);
      }
    }
  }
}

TEST(InitRandom, DeterministicAndBounded) {
  Architecture arch(3, {4}, 2);
  EXPECT_EQ(init_random(arch, 7).values, init_random(arch, 7).values);
  EXPECT_NE(init_random(arch, 7).values, init_random(arch, 8).values);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const ParamVector w = init_random(arch, seed);
    for (int l = 0; l < arch.layer_count(); ++l) {
      const double bound = 0.7 / std::sqrt(static_cast<double>(arch.fan_in(l)));
      for (int i = 0; i < arch.fan_out(l); ++i) {
        for (int j = 0; j < arch.fan_in(l); ++j) {
          const double v = w[arch.weight_index(l, i, j)];
          ASSERT_TRUE(v > -bound && v < bound) << v;
        }
        const double b = w[arch.bias_index(l, i)];
        ASSERT_TRUE(b > -0.1 && b < 0.1) << b;
      }
    }
  }
}

// The derivatives of an MLP grow at most like (1 + |z|) and (1 + |z|^2).
// Fit C on |z| <= 100 and check the same C on |z| <= 1000.
TEST(GrowthBounds, FirstAndSecondDerivativeOrders) {
  Rng rng(26);
  Architecture arch(2, {3}, 2);
  const ParamVector w = random_weights(arch, rng, 2.0);
  const int p = arch.param_count();
  std::vector<Vector> dirs;
  for (int i = 0; i < 8; ++i) {
    Vector u = random_input(rng, 2, 1.0);
    dirs.push_back(u / u.norm());
  }
  double c1 = 0.0, c2 = 0.0;
  auto ratios = [&](const Vector& z, double& r1, double& r2) {
    const double s = z.norm();
    const Matrix jac = jacobian(w, z);
    r1 = 0.0;
    r2 = 0.0;
    for (int k = 0; k < p; ++k) {
      r1 = std::max(r1, jac.row(k).norm() / (1.0 + s));
      for (int l = 0; l < p; ++l)
        r2 = std::max(r2, second_derivative(w, z, k, l).norm() / (1.0 + s * s));
    }
  };
  for (const Vector& u : dirs) {
    for (int i = 0; i <= 200; ++i) {
      double r1, r2;
      ratios(u * (100.0 * i / 200.0), r1, r2);
      c1 = std::max(c1, r1);
      c2 = std::max(c2, r2);
    }
  }
  for (const Vector& u : dirs) {
    for (int i = 10; i <= 100; ++i) {
      double r1, r2;
      ratios(u * (10.0 * i), r1, r2);
      EXPECT_LE(r1, c1 * (1.0 + 1e-12));
      EXPECT_LE(r2, c2 * (1.0 + 1e-12));
    }
  }
}

}  // namespace
}  // namespace mlpreg
