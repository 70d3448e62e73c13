#include "bifa/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bifa {

Eigen::LLT<Matrix> robust_llt(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
  double jitter = 1e-8 * scale;
  for (int attempt = 0; attempt < 6; ++attempt, jitter *= 10.0) {
    Matrix b = a;
    b.diagonal().array() += jitter;
    llt.compute(b);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericError("cholesky failed after jitter escalation");
}

Vector sample_gaussian_canonical(const Matrix& precision, const Vector& b, Rng& rng) {
  auto llt = robust_llt(precision);
  Vector mean = llt.solve(b);
  Vector z = rng.normal_vector(b.size());
  return mean + llt.matrixU().solve(z);
}

Matrix sample_gaussian_canonical_cols(const Matrix& precision, const Matrix& b, Rng& rng) {
  auto llt = robust_llt(precision);
  Matrix mean = llt.solve(b);
  Matrix z(b.rows(), b.cols());
  for (Index j = 0; j < b.cols(); ++j)
    for (Index i = 0; i < b.rows(); ++i) z(i, j) = rng.normal();
  return mean + llt.matrixU().solve(z);
}

SymEigen sym_eigen_desc(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.info() != Eigen::Success) throw NumericError("eigen decomposition failed");
  const Index n = a.rows();
  SymEigen out{Vector(n), Matrix(n, n)};
  for (Index i = 0; i < n; ++i) {
    out.values(i) = es.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = es.eigenvectors().col(n - 1 - i);
  }
  return out;
}

double max_asymmetry(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("matrix is not square");
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

double logdet_spd(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericError("logdet: matrix not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

double lu_rcond(const Matrix& a) {
  Eigen::PartialPivLU<Matrix> lu(a);
  const Vector d = lu.matrixLU().diagonal().cwiseAbs();
  const double mx = d.maxCoeff();
  if (!(mx > 0.0) || !std::isfinite(mx)) return 0.0;
  return d.minCoeff() / mx;
}

Matrix cross_product(const Matrix& y) {
  Matrix out = Matrix::Zero(y.cols(), y.cols());
  out.selfadjointView<Eigen::Lower>().rankUpdate(y.transpose());
  return out.selfadjointView<Eigen::Lower>();
}

}  // namespace bifa
