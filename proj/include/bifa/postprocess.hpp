#pragma once

#include "bifa/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bifa {

/// Post-processed point estimates shared by every method.
struct FitResult {
  std::string method;
  Matrix phi;             // P x K_hat
  MatrixList lambda;      // per study, P x J_s
  VectorList psi;         // per study residual diagonals (copies when shared)
  bool psi_shared = false;
  Matrix sigma_phi;
  MatrixList sigma_lambda;
  MatrixList sigma_marginal;
  Index k_hat = 0;
  std::vector<Index> j_hat;

  struct Provenance {
    long iterations = 0;
    std::uint64_t seed = 0;
    std::string alignment;
  } provenance;
  std::vector<std::string> warnings;

  Index num_studies() const { return static_cast<Index>(sigma_marginal.size()); }
  /// Checks symmetry / PSD / count invariants; throws NumericError.
  void validate() const;
};

struct AlignResult {
  MatrixList draws;
  Matrix mean;
  int sweeps = 0;
  bool degenerate = false;  // some draw was all zeros and left unrotated
};

/// Iterative orthogonal Procrustes alignment of a draw stack to its mean.
AlignResult op_align(const MatrixList& draws, double tol = 1e-8, int max_sweeps = 10);

/// Orthogonal R minimizing ||x R - ref||_F.
Matrix procrustes_rotation(const Matrix& x, const Matrix& ref);

struct VarimaxResult {
  Matrix loadings;
  Matrix rotation;  // loadings = input * rotation
};

/// Raw varimax; columns sign-fixed so each column sum is non-negative.
VarimaxResult varimax(const Matrix& loadings, double tol = 1e-8, int max_iter = 1000);
double varimax_criterion(const Matrix& loadings);

/// Varimax every draw, then greedily match columns (permutation and sign)
/// to a pivot draw.
MatrixList match_align(const MatrixList& draws);

struct EvdCount {
  Index count = 0;
  bool degenerate = false;  // count == 0
};

/// Number of eigenvalues with share lambda_i / sum(lambda) > threshold.
EvdCount evd_num_factors(const Matrix& sigma, double threshold = 0.05);

/// U_k N_k^{1/2}, largest-magnitude entry of each column positive.
Matrix spectral_loadings(const Matrix& sigma, Index k);

/// Columns reordered by squared norm, largest first.
Matrix order_columns_by_variance(const Matrix& loadings);

Matrix mean_of(const MatrixList& draws);
Vector mean_of(const VectorList& draws);

}  // namespace bifa
