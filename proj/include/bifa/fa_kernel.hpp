#pragma once

#include "bifa/common.hpp"
#include "bifa/priors.hpp"
#include "bifa/random.hpp"

#include <vector>

namespace bifa {

/// Inverse-gamma prior IG(shape, scale) on residual variances.
struct PsiPrior {
  double shape = 1.0;
  double scale = 0.3;
};

/// Gibbs state for the masked factor model shared by the MGPS-based
/// samplers. Study s uses column k of `loadings` iff mask(s, k) == 1:
///   y_is = loadings * diag(mask_s) * f_is + e_is,  e_is ~ N(0, diag(psi_s)),
///   f_is ~ N(0, diag(factor_var)).
/// Stack FA is an all-ones mask, BMSFA a [common | block-diagonal] mask.
/// Each prior block is a set of columns carrying its own MGPS state.
struct FaKernel {
  Matrix loadings;                      // P x K*
  IntMatrix mask;                       // S x K*
  VectorList psi;                       // per study, length P
  bool psi_shared = false;
  Vector factor_var;                    // K*, ones unless heteroscedastic
  std::vector<std::vector<Index>> blocks;
  std::vector<MgpsState> mgps;          // one per block
  MatrixList factors;                   // per study N_s x K*, zero where masked out
  PsiPrior psi_prior;

  FaKernel() = default;
  FaKernel(Index p, IntMatrix mask, std::vector<std::vector<Index>> blocks, bool psi_shared, MgpsHyper hyper,
           PsiPrior psi_prior);

  Index num_vars() const { return loadings.rows(); }
  Index num_cols() const { return loadings.cols(); }
  Index num_studies() const { return mask.rows(); }
  std::vector<Index> active_columns(Index s) const;

  /// Deterministic start: spectral loadings of the pooled covariance for
  /// columns shared by every study, of each study's residual covariance for
  /// the rest; psi from the leftover diagonal.
  void initialize(const MatrixList& data);

  void draw_factors(const MatrixList& data, Rng& rng);
  void draw_loadings(const MatrixList& data, Rng& rng);
  void draw_psi(const MatrixList& data, Rng& rng);
  void draw_shrinkage(Rng& rng);

  /// One full sweep in the order factors, loadings, psi, shrinkage.
  void sweep(const MatrixList& data, Rng& rng);

  /// Prior precision of every loading entry (P x K*).
  Matrix prior_precision() const;

  /// Column bookkeeping for samplers with a variable number of columns.
  /// New columns join the given block with loadings drawn from its prior.
  void append_columns(const IntMatrix& new_mask_cols, std::size_t block, Rng& rng);
  void keep_columns(const std::vector<Index>& cols);

  /// Marginal covariance of study s.
  Matrix marginal_covariance(Index s) const;
};

}  // namespace bifa
