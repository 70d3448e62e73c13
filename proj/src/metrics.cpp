#include "bifa/metrics.hpp"

#include "bifa/linalg.hpp"

#include <cmath>
#include <cstdio>

namespace bifa {

double rv_coefficient(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw DimensionError("rv_coefficient: row counts differ");
  // Cross-product traces through the small K x K side.
  const double xy = (x.transpose() * y).squaredNorm();
  const double xx = (x.transpose() * x).squaredNorm();
  const double yy = (y.transpose() * y).squaredNorm();
  if (xx == 0.0 || yy == 0.0) throw DomainError("rv_coefficient: zero matrix");
  return std::min(1.0, xy / std::sqrt(xx * yy));
}

double frobenius_distance(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw DimensionError("frobenius_distance: shapes differ");
  return (x - y).norm();
}

Matrix bartlett_scores(const Matrix& basis, const Vector& psi, const Matrix& y, bool* ridged) {
  if (basis.rows() != psi.size() || y.cols() != basis.rows()) throw DimensionError("bartlett_scores: shape mismatch");
  const Index k = basis.cols();
  if (ridged) *ridged = false;
  if (k == 0) return Matrix(y.rows(), 0);
  const Matrix w = psi.cwiseInverse().asDiagonal() * basis;
  Matrix gram = basis.transpose() * w;
  if (lu_rcond(gram) < 1e-12) {
    gram.diagonal().array() += 1e-8 * std::max(gram.trace(), 1e-300) / static_cast<double>(k);
    if (ridged) *ridged = true;
  }
  return gram.partialPivLu().solve(w.transpose() * y.transpose()).transpose();
}

double prediction_mse(const FitResult& fit, const MultiStudyDataset& test, bool use_specific,
                      std::vector<std::string>* warnings) {
  if (test.num_studies() != static_cast<Index>(fit.psi.size()))
    throw DimensionError("prediction_mse: study count differs from the fit");
  double sse = 0.0;
  double count = 0.0;
  for (Index s = 0; s < test.num_studies(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    const Index extra = use_specific && su < fit.lambda.size() ? fit.lambda[su].cols() : 0;
    Matrix basis(fit.phi.rows(), fit.phi.cols() + extra);
    basis << fit.phi, (extra ? fit.lambda[su] : Matrix(fit.phi.rows(), 0));
    const Matrix& y = test.studies[su];
    bool ridged = false;
    const Matrix f = bartlett_scores(basis, fit.psi[su], y, &ridged);
    if (ridged && warnings) warnings->push_back("study " + std::to_string(s + 1) + ": singular Bartlett system, ridge added");
    const Matrix yhat = basis.cols() ? Matrix(f * basis.transpose()) : Matrix::Zero(y.rows(), y.cols());
    sse += (yhat - y).squaredNorm();
    count += static_cast<double>(y.size());
  }
  return sse / count;
}

std::string format_mean_sd(const std::vector<double>& values) {
  if (values.empty()) return "NA";
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  const double sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f(%.2f)", m, sd);
  return buf;
}

}  // namespace bifa
