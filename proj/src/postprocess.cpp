#include "bifa/postprocess.hpp"

#include "bifa/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bifa {

void FitResult::validate() const {
  if (phi.cols() != k_hat) throw NumericError(method + ": k_hat does not match phi columns");
  auto check_sym = [&](const Matrix& m, const std::string& what) {
    if (m.size() == 0) return;
    if (max_asymmetry(m) > 1e-8 * std::max(1.0, m.cwiseAbs().maxCoeff()))
      throw NumericError(method + ": " + what + " is not symmetric");
  };
  check_sym(sigma_phi, "sigma_phi");
  for (const auto& m : sigma_lambda) check_sym(m, "sigma_lambda");
  for (const auto& m : sigma_marginal) {
    check_sym(m, "sigma_marginal");
    if (m.size() && sym_eigen_desc(symmetrize(m)).values.minCoeff() < -1e-8 * std::max(1.0, m.norm()))
      throw NumericError(method + ": sigma_marginal is not PSD");
  }
}

Matrix mean_of(const MatrixList& draws) {
  if (draws.empty()) throw DimensionError("mean of an empty draw list");
  Matrix acc = Matrix::Zero(draws.front().rows(), draws.front().cols());
  for (const auto& d : draws) acc += d;
  return acc / static_cast<double>(draws.size());
}

Vector mean_of(const VectorList& draws) {
  if (draws.empty()) throw DimensionError("mean of an empty draw list");
  Vector acc = Vector::Zero(draws.front().size());
  for (const auto& d : draws) acc += d;
  return acc / static_cast<double>(draws.size());
}

Matrix procrustes_rotation(const Matrix& x, const Matrix& ref) {
  Eigen::JacobiSVD<Matrix> svd(x.transpose() * ref, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

namespace {

double min_singular(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues().minCoeff();
}

}  // namespace

AlignResult op_align(const MatrixList& draws, double tol, int max_sweeps) {
  if (draws.empty()) throw DimensionError("op_align: no draws");
  const Index p = draws.front().rows();
  const Index k = draws.front().cols();
  for (const auto& d : draws)
    if (d.rows() != p || d.cols() != k) throw DimensionError("op_align: draws differ in shape");

  AlignResult out;
  out.draws = draws;
  if (draws.size() == 1 || k == 0) {
    out.mean = draws.front();
    out.degenerate = k > 0 && draws.front().squaredNorm() == 0.0;
    return out;
  }

  std::vector<bool> zero(draws.size());
  for (std::size_t t = 0; t < draws.size(); ++t) zero[t] = draws[t].squaredNorm() == 0.0;
  out.degenerate = std::any_of(zero.begin(), zero.end(), [](bool z) { return z; });

  // Start from the mean when it has not collapsed through sign/rotation
  // cancellation; otherwise from the first non-zero draw.
  Matrix ref = mean_of(draws);
  std::size_t first = 0;
  while (first < draws.size() && zero[first]) ++first;
  if (first == draws.size()) {
    out.mean = ref;
    return out;
  }
  if (min_singular(ref) < 0.5 * min_singular(draws[first])) ref = draws[first];

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (std::size_t t = 0; t < draws.size(); ++t)
      out.draws[t] = zero[t] ? draws[t] : Matrix(draws[t] * procrustes_rotation(draws[t], ref));
    Matrix next = mean_of(out.draws);
    const double change = (next - ref).norm();
    ref = std::move(next);
    out.sweeps = sweep + 1;
    if (change < tol * std::max(1.0, ref.norm())) break;
  }
  out.mean = ref;
  return out;
}

double varimax_criterion(const Matrix& loadings) {
  const double p = static_cast<double>(loadings.rows());
  double v = 0.0;
  for (Index k = 0; k < loadings.cols(); ++k) {
    const Eigen::ArrayXd sq = loadings.col(k).array().square();
    v += sq.square().sum() / p - std::pow(sq.sum() / p, 2);
  }
  return v;
}

VarimaxResult varimax(const Matrix& loadings, double tol, int max_iter) {
  const Index p = loadings.rows();
  const Index k = loadings.cols();
  VarimaxResult out{loadings, Matrix::Identity(k, k)};
  if (k >= 2) {
    Matrix rot = Matrix::Identity(k, k);
    double d = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      const Matrix z = loadings * rot;
      const Vector colsq = z.array().square().colwise().sum().transpose();
      const Matrix target = z.array().cube().matrix() - z * colsq.asDiagonal() / static_cast<double>(p);
      Eigen::JacobiSVD<Matrix> svd(loadings.transpose() * target, Eigen::ComputeFullU | Eigen::ComputeFullV);
      rot = svd.matrixU() * svd.matrixV().transpose();
      const double dpast = d;
      d = svd.singularValues().sum();
      if (d < dpast * (1.0 + tol)) break;
    }
    out.rotation = rot;
    out.loadings = loadings * rot;
  }
  for (Index j = 0; j < k; ++j)
    if (out.loadings.col(j).sum() < 0.0) {
      out.loadings.col(j) *= -1.0;
      out.rotation.col(j) *= -1.0;
    }
  return out;
}

MatrixList match_align(const MatrixList& draws) {
  if (draws.empty()) throw DimensionError("match_align: no draws");
  const Index k = draws.front().cols();
  MatrixList rotated;
  rotated.reserve(draws.size());
  for (const auto& d : draws) rotated.push_back(varimax(d).loadings);

  // Pivot: draw with the median Frobenius norm.
  std::vector<std::size_t> idx(rotated.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rotated[a].norm() < rotated[b].norm(); });
  const Matrix pivot = rotated[idx[idx.size() / 2]];
  Vector pivot_norm = pivot.colwise().norm().transpose();

  for (auto& d : rotated) {
    const Vector dn = d.colwise().norm().transpose();
    Matrix sim = d.transpose() * pivot;
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b) sim(a, b) /= std::max(dn(a) * pivot_norm(b), 1e-300);
    std::vector<bool> used_src(static_cast<std::size_t>(k)), used_dst(static_cast<std::size_t>(k));
    Matrix aligned(d.rows(), k);
    for (Index step = 0; step < k; ++step) {
      double best = -1.0;
      Index bs = 0, bd = 0;
      for (Index a = 0; a < k; ++a) {
        if (used_src[static_cast<std::size_t>(a)]) continue;
        for (Index b = 0; b < k; ++b) {
          if (used_dst[static_cast<std::size_t>(b)]) continue;
          if (std::abs(sim(a, b)) > best) {
            best = std::abs(sim(a, b));
            bs = a;
            bd = b;
          }
        }
      }
      used_src[static_cast<std::size_t>(bs)] = used_dst[static_cast<std::size_t>(bd)] = true;
      aligned.col(bd) = (sim(bs, bd) < 0.0 ? -1.0 : 1.0) * d.col(bs);
    }
    d = std::move(aligned);
  }
  return rotated;
}

EvdCount evd_num_factors(const Matrix& sigma, double threshold) {
  if (sigma.rows() != sigma.cols()) throw DimensionError("evd_num_factors: matrix is not square");
  if (max_asymmetry(sigma) > 1e-8) throw DomainError("evd_num_factors: matrix is not symmetric");
  const Vector ev = sym_eigen_desc(sigma).values;
  const double total = ev.sum();
  EvdCount out;
  if (total > 0.0)
    for (Index i = 0; i < ev.size(); ++i)
      if (ev(i) / total > threshold) ++out.count;
  out.degenerate = out.count == 0;
  return out;
}

Matrix spectral_loadings(const Matrix& sigma, Index k) {
  if (sigma.rows() != sigma.cols()) throw DimensionError("spectral_loadings: matrix is not square");
  if (k < 0 || k > sigma.rows()) throw DimensionError("spectral_loadings: k exceeds P");
  const SymEigen es = sym_eigen_desc(symmetrize(sigma));
  Matrix out(sigma.rows(), k);
  for (Index j = 0; j < k; ++j) {
    double lam = es.values(j);
    if (lam < -1e-8) throw DomainError("spectral_loadings: negative retained eigenvalue");
    lam = std::max(lam, 0.0);
    Vector u = es.vectors.col(j);
    Index imax;
    u.cwiseAbs().maxCoeff(&imax);
    if (u(imax) < 0.0) u = -u;
    out.col(j) = u * std::sqrt(lam);
  }
  return out;
}

Matrix order_columns_by_variance(const Matrix& loadings) {
  const Index k = loadings.cols();
  std::vector<Index> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), 0);
  const Vector ss = loadings.colwise().squaredNorm().transpose();
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return ss(a) > ss(b); });
  Matrix out(loadings.rows(), k);
  for (Index j = 0; j < k; ++j) out.col(j) = loadings.col(idx[static_cast<std::size_t>(j)]);
  return out;
}

}  // namespace bifa
