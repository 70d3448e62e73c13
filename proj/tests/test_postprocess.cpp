#include "bifa/linalg.hpp"
#include "bifa/postprocess.hpp"
#include "bifa/random.hpp"

#include <gtest/gtest.h>

using namespace bifa;

namespace {

Matrix random_orthogonal(Index k, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(k, k));
  return qr.householderQ() * Matrix::Identity(k, k);
}

Matrix random_psd(Index p, Rng& rng) {
  Matrix a = rng.normal_matrix(p, p);
  return a * a.transpose();
}

}  // namespace

TEST(OpAlign, RecoversRotatedCopies) {
  Rng rng(1);
  const Matrix phi = rng.normal_matrix(10, 3);
  MatrixList stack = {phi, phi * random_orthogonal(3, rng), phi * random_orthogonal(3, rng)};
  auto res = op_align(stack);
  for (const auto& d : res.draws) EXPECT_LT((d - res.draws[0]).cwiseAbs().maxCoeff(), 1e-8);
  // Mean equals phi up to one global rotation.
  const Matrix r = procrustes_rotation(res.mean, phi);
  EXPECT_LT((res.mean * r - phi).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(OpAlign, SingleDrawIsUnchanged) {
  Rng rng(2);
  const Matrix phi = rng.normal_matrix(5, 2);
  auto res = op_align({phi});
  EXPECT_EQ(res.draws[0], phi);
  EXPECT_EQ(res.mean, phi);
}

TEST(OpAlign, SignFlipStackDoesNotCancel) {
  Rng rng(3);
  const Matrix phi = rng.normal_matrix(12, 3);
  MatrixList stack;
  for (int t = 0; t < 20; ++t) {
    Matrix d = phi;
    for (Index k = 0; k < 3; ++k)
      if (rng.uniform() < 0.5) d.col(k) *= -1.0;
    stack.push_back(d);
  }
  auto res = op_align(stack);
  EXPECT_GE(res.mean.norm(), 0.99 * phi.norm());
}

TEST(OpAlign, AlignedStackIsAFixedPoint) {
  Rng rng(4);
  const Matrix phi = rng.normal_matrix(15, 3);
  MatrixList stack;
  for (int t = 0; t < 30; ++t) stack.push_back((phi + 0.1 * rng.normal_matrix(15, 3)) * random_orthogonal(3, rng));
  auto once = op_align(stack);
  auto twice = op_align(once.draws);
  for (std::size_t t = 0; t < stack.size(); ++t) EXPECT_LT((twice.draws[t] - once.draws[t]).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OpAlign, ZeroDrawIsFlaggedAndLeftAlone) {
  Rng rng(5);
  const Matrix phi = rng.normal_matrix(6, 2);
  auto res = op_align({phi, Matrix::Zero(6, 2), phi * random_orthogonal(2, rng)});
  EXPECT_TRUE(res.degenerate);
  EXPECT_TRUE(res.draws[1].isZero(0.0));
}

TEST(Varimax, SingleColumnOnlyFixesSign) {
  Matrix l(3, 1);
  l << -1, -2, 0.5;
  auto res = varimax(l);
  EXPECT_EQ(res.loadings, -l);
}

TEST(Varimax, OptimalMatrixIsUnchanged) {
  Matrix l(4, 2);
  l << 1, 0, 0.9, 0, 0, 0.8, 0, 1.1;
  auto res = varimax(l);
  EXPECT_LT((res.loadings - l).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Varimax, TextbookFixtureImprovesCriterion) {
  Matrix l(4, 2);
  l << 0.7, 0.6, 0.8, 0.5, 0.6, -0.6, 0.5, -0.7;
  auto res = varimax(l);
  EXPECT_GT(varimax_criterion(res.loadings), varimax_criterion(l));
}

TEST(Varimax, NeverDecreasesCriterionAndPreservesCovariance) {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const Matrix l = rng.normal_matrix(20, 4);
    auto res = varimax(l);
    EXPECT_GE(varimax_criterion(res.loadings), varimax_criterion(l) - 1e-12);
    EXPECT_LT((l * l.transpose() - res.loadings * res.loadings.transpose()).norm(), 1e-10);
    EXPECT_LT((res.rotation.transpose() * res.rotation - Matrix::Identity(4, 4)).norm(), 1e-10);
  }
}

TEST(MatchAlign, SignFlippedDrawsAgree) {
  Rng rng(7);
  Matrix phi(6, 2);
  phi << 1, 0.1, 0.9, 0, 0.8, 0.05, 0, 1, 0.1, 0.9, 0, 0.7;
  Matrix flipped = phi;
  flipped.col(0) *= -1.0;
  auto out = match_align({phi, flipped});
  EXPECT_LT((out[0] - out[1]).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(MatchAlign, PermutedDrawsAgree) {
  Rng rng(8);
  Matrix phi(6, 3);
  phi << 1, 0, 0, 0.9, 0, 0, 0, 1, 0, 0, 0.8, 0, 0, 0, 1, 0, 0, 0.7;
  Matrix perm(6, 3);
  perm.col(0) = -phi.col(2);
  perm.col(1) = phi.col(0);
  perm.col(2) = phi.col(1);
  auto out = match_align({phi, perm, phi});
  EXPECT_LT((out[0] - out[1]).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(EvdNumFactors, Examples) {
  Matrix d = Vector((Vector(3) << 10, 0.1, 0.1).finished()).asDiagonal();
  EXPECT_EQ(evd_num_factors(d).count, 1);
  auto id = evd_num_factors(Matrix::Identity(40, 40));
  EXPECT_EQ(id.count, 0);
  EXPECT_TRUE(id.degenerate);
  Matrix asym = Matrix::Identity(3, 3);
  asym(0, 1) = 1e-6;
  EXPECT_THROW(evd_num_factors(asym), DomainError);
}

TEST(EvdNumFactors, ScaleInvariant) {
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    Matrix l = rng.normal_matrix(10, 3);
    Matrix s = l * l.transpose() + 0.3 * Matrix::Identity(10, 10);
    EXPECT_EQ(evd_num_factors(s).count, evd_num_factors(7.5 * s).count);
  }
}

TEST(SpectralLoadings, RankOneRecovery) {
  Rng rng(10);
  const Vector phi = rng.normal_vector(8);
  Matrix l = spectral_loadings(phi * phi.transpose(), 1);
  const double cosine = std::abs(l.col(0).dot(phi)) / (l.col(0).norm() * phi.norm());
  EXPECT_NEAR(cosine, 1.0, 1e-10);
  EXPECT_NEAR(l.col(0).norm(), phi.norm(), 1e-10);
}

TEST(SpectralLoadings, IdentityGivesOrthonormalPair) {
  Matrix l = spectral_loadings(Matrix::Identity(5, 5), 2);
  EXPECT_LT((l.transpose() * l - Matrix::Identity(2, 2)).norm(), 1e-10);
  const Matrix proj = l * l.transpose();
  EXPECT_LT((proj * proj - proj).norm(), 1e-10);
}

TEST(SpectralLoadings, EckartYoungOptimal) {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Matrix s = random_psd(5, rng);
    Matrix l = spectral_loadings(s, 3);
    const SymEigen es = sym_eigen_desc(s);
    const Matrix best = es.vectors.leftCols(3) * es.values.head(3).asDiagonal() * es.vectors.leftCols(3).transpose();
    EXPECT_LT((l * l.transpose() - best).norm(), 1e-10);
  }
}

TEST(SpectralLoadings, ErrorNonIncreasingInK) {
  Rng rng(12);
  const Matrix s = random_psd(8, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (Index k = 0; k <= 8; ++k) {
    Matrix l = spectral_loadings(s, k);
    const double err = (s - l * l.transpose()).norm();
    EXPECT_LE(err, prev + 1e-12);
    prev = err;
  }
}

TEST(SpectralLoadings, NegativeEigenvalueIsRejected) {
  Matrix s = Matrix::Identity(3, 3);
  s(2, 2) = -1.0;
  EXPECT_THROW(spectral_loadings(s, 3), DomainError);
  s(2, 2) = -1e-12;
  EXPECT_NO_THROW(spectral_loadings(s, 3));
}

TEST(OrderColumns, LargestVarianceFirst) {
  Matrix l(2, 3);
  l << 1, 3, 2, 0, 0, 0;
  Matrix o = order_columns_by_variance(l);
  EXPECT_EQ(o(0, 0), 3);
  EXPECT_EQ(o(0, 1), 2);
  EXPECT_EQ(o(0, 2), 1);
}
