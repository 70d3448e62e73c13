#pragma once

#include "bifa/common.hpp"
#include "bifa/random.hpp"

namespace bifa {

/// Cholesky factor of a symmetric positive-definite matrix. On failure the
/// diagonal is jittered (1e-8, escalating by 10x) up to six times before a
/// NumericError is raised.
Eigen::LLT<Matrix> robust_llt(const Matrix& a);

/// Draw x ~ N(Q^{-1} b, Q^{-1}) given precision Q and linear term b.
Vector sample_gaussian_canonical(const Matrix& precision, const Vector& b, Rng& rng);

/// Same, for many independent right-hand sides sharing one precision: each
/// column of B gives one draw (column of the result).
Matrix sample_gaussian_canonical_cols(const Matrix& precision, const Matrix& b, Rng& rng);

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
struct SymEigen {
  Vector values;
  Matrix vectors;
};
SymEigen sym_eigen_desc(const Matrix& a);

double max_asymmetry(const Matrix& a);
Matrix symmetrize(const Matrix& a);

/// log det of an SPD matrix via its Cholesky factor.
double logdet_spd(const Matrix& a);

/// Reciprocal condition estimate from a partial-pivot LU (ratio of smallest
/// to largest |U_ii|).
double lu_rcond(const Matrix& a);

/// Sample covariance helpers on row-observation matrices.
Matrix cross_product(const Matrix& y);  // YᵀY

}  // namespace bifa
