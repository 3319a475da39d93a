#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mlpreg/io.hpp"
#include "mlpreg/sampler.hpp"
#include "oracles.hpp"

namespace mlpreg {
namespace {

GenSpec toy_spec(const SpdMatrix& g, Eigen::Index n, std::uint64_t seed) {
  return GenSpec{testing::toy_w0(), NoiseSpec{g}, InputLaw::StandardGaussian, n, seed};
}

Matrix noise_cov(const GenSpec& spec, const Dataset& data) {
  const RowMatrix r = residuals(spec.w0, data);
  return Matrix(r.transpose()) * r / static_cast<double>(r.rows());
}

TEST(SampleDataset, VanishingNoiseGivesNoiselessTargets) {
  const GenSpec spec = toy_spec(SpdMatrix(1e-12 * Matrix::Identity(2, 2)), 1000, 3);
  const Dataset data = sample_dataset(spec);
  for (Eigen::Index t = 0; t < data.n(); ++t) {
    const Vector f = forward(spec.w0, data.inputs.row(t).transpose());
    EXPECT_LT((data.targets.row(t).transpose() - f).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(SampleDataset, IdentityNoiseCovarianceAtLargeN) {
  const GenSpec spec = toy_spec(SpdMatrix::identity(2), 100000, 4);
  const Matrix c = noise_cov(spec, sample_dataset(spec));
  EXPECT_LT((c - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.02) << c;
}

TEST(SampleDataset, CorrelatedNoiseCovarianceAtLargeN) {
  const SpdMatrix g = make_gamma0(GammaKind::ArLike, 2, 1.0, 0.9);
  const GenSpec spec = toy_spec(g, 100000, 5);
  const Matrix c = noise_cov(spec, sample_dataset(spec));
  EXPECT_LT((c - g.entries()).cwiseAbs().maxCoeff(), 0.02) << c;
}

TEST(SampleDataset, InputsAreStandardGaussian) {
  const RowMatrix z = sample_inputs(100000, 3, 6);
  const Vector mean = z.colwise().mean();
  const Matrix c = (z.rowwise() - mean.transpose()).transpose() * (z.rowwise() - mean.transpose()) / 1e5;
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.02);
  EXPECT_LT((c - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.02);
}

TEST(SampleDataset, SameSeedIsBitwiseIdentical) {
  const GenSpec spec = toy_spec(make_gamma0(GammaKind::ArLike, 2, 0.1, 0.9), 500, 8);
  const Dataset a = sample_dataset(spec), b = sample_dataset(spec);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.targets, b.targets);
  GenSpec other = spec;
  other.seed = 9;
  EXPECT_NE(sample_dataset(other).inputs, a.inputs);
}

// Noise draws come from their own substream, so changing q leaves eps alone.
TEST(SampleDataset, NoiseStreamIndependentOfInputDimension) {
  const SpdMatrix g = make_gamma0(GammaKind::Equicorrelated, 2, 1.0, 0.3);
  GenSpec s1{ParamVector(Architecture(1, {2}, 2)), NoiseSpec{g}, InputLaw::StandardGaussian, 200, 10};
  GenSpec s3{ParamVector(Architecture(3, {2}, 2)), NoiseSpec{g}, InputLaw::StandardGaussian, 200, 10};
  // zero weights: F = 0, targets are the noise itself
  EXPECT_EQ(sample_dataset(s1).targets, sample_dataset(s3).targets);
  EXPECT_NE(sample_dataset(s1).inputs.col(0), sample_dataset(s3).inputs.col(0));
}

TEST(SampleDataset, RejectsBadSpecs) {
  GenSpec spec = toy_spec(SpdMatrix::identity(2), 0, 1);
  EXPECT_THROW(sample_dataset(spec), InvalidArgument);
  spec.n = 10;
  spec.noise.gamma0 = SpdMatrix::identity(3);
  EXPECT_THROW(sample_dataset(spec), DimensionMismatch);
}

// E|Z|^3 = 2 sqrt(2/pi) for a standard normal.
TEST(SampleDataset, ThirdAbsoluteMomentOfInputs) {
  const RowMatrix z = sample_inputs(1000000, 1, 12);
  const double m3 = z.array().abs().cube().mean();
  const double exact = 2.0 * std::sqrt(2.0 / std::numbers::pi);
  EXPECT_TRUE(std::isfinite(m3));
  EXPECT_LT(std::abs(m3 - exact) / exact, 0.2);
}

TEST(MakeGamma0, Examples) {
  EXPECT_EQ(make_gamma0(GammaKind::Equicorrelated, 3, 1.0, 0.0).entries(), Matrix::Identity(3, 3));
  Matrix ar(2, 2);
  ar << 1.0, 0.9, 0.9, 1.0;
  EXPECT_EQ(make_gamma0(GammaKind::ArLike, 2, 1.0, 0.9).entries(), ar);
  EXPECT_EQ(make_gamma0(GammaKind::Identity, 4, 2.5).entries(), 2.5 * Matrix::Identity(4, 4));
  const SpdMatrix eq = make_gamma0(GammaKind::Equicorrelated, 2, 1.0, -0.6);
  Eigen::SelfAdjointEigenSolver<Matrix> es(eq.entries());
  EXPECT_NEAR(es.eigenvalues()[0], 0.4, 1e-15);
  EXPECT_NEAR(es.eigenvalues()[1], 1.6, 1e-15);
  Matrix ar3(3, 3);
  ar3 << 1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0;
  EXPECT_LT((make_gamma0(GammaKind::ArLike, 3, 2.0, 0.5).entries() - 2.0 * ar3).norm(), 1e-15);
}

TEST(MakeGamma0, OutOfRangeRho) {
  EXPECT_THROW(make_gamma0(GammaKind::ArLike, 2, 1.0, 1.0), NotPositiveDefinite);
  EXPECT_THROW(make_gamma0(GammaKind::ArLike, 2, 1.0, -1.2), NotPositiveDefinite);
  EXPECT_THROW(make_gamma0(GammaKind::Equicorrelated, 3, 1.0, -0.5), NotPositiveDefinite);
  EXPECT_THROW(make_gamma0(GammaKind::Equicorrelated, 2, 1.0, 1.0), NotPositiveDefinite);
  EXPECT_NO_THROW(make_gamma0(GammaKind::Equicorrelated, 3, 1.0, -0.49));
  EXPECT_THROW(make_gamma0(GammaKind::Identity, 2, 0.0), NotPositiveDefinite);
  EXPECT_EQ(gamma_kind_from_string("arlike"), GammaKind::ArLike);
  EXPECT_THROW(gamma_kind_from_string("toeplitz"), InvalidArgument);
}

TEST(DatasetCsv, HeaderAndFullPrecision) {
  const GenSpec spec = toy_spec(make_gamma0(GammaKind::ArLike, 2, 0.1, 0.9), 50, 13);
  const Dataset data = sample_dataset(spec);
  const std::string csv = dataset_csv(data);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "z1,y1,y2");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 51);
  const Dataset back = parse_dataset_csv(csv);
  EXPECT_EQ(back.inputs, data.inputs);
  EXPECT_EQ(back.targets, data.targets);
}

}  // namespace
}  // namespace mlpreg
