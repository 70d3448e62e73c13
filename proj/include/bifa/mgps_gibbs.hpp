#pragma once

#include "bifa/dataset.hpp"
#include "bifa/fa_kernel.hpp"
#include "bifa/postprocess.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bifa {

struct McmcControl {
  long nrun = 10000;
  long burn = 8000;
  long thin = 1;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
  long num_saved() const { return (nrun - burn) / thin; }
  bool saves(long iter) const { return iter >= burn && (iter - burn + 1) % thin == 0; }
};

struct MgpsOptions {
  MgpsHyper hyper;
  PsiPrior psi_prior;
};

/// Posterior draws of Stack FA, Ind FA or BMSFA. Covariance draws are
/// rebuilt on demand from the stored loadings and residual variances.
struct MgpsFit {
  std::string model;                      // "stack_fa", "ind_fa", "bmsfa"
  MatrixList phi_draws;                   // empty for Ind FA
  std::vector<MatrixList> lambda_draws;   // [study][draw], empty for Stack FA
  std::vector<VectorList> psi_draws;      // [study][draw]
  bool psi_shared = false;
  long iterations = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  Index num_studies() const { return static_cast<Index>(psi_draws.size()); }
  Index num_draws() const { return psi_draws.empty() ? 0 : static_cast<Index>(psi_draws.front().size()); }
  Matrix sigma_marginal_draw(Index s, Index t) const;
};

/// Called after every iteration with (iteration, nrun).
using ProgressFn = std::function<void(long, long)>;

MgpsFit fit_stack_fa(const MultiStudyDataset& ds, Index k, const McmcControl& ctrl, const MgpsOptions& opts = {},
                     const ProgressFn& progress = {});
MgpsFit fit_ind_fa(const MultiStudyDataset& ds, const std::vector<Index>& j, const McmcControl& ctrl,
                   const MgpsOptions& opts = {}, const ProgressFn& progress = {});
MgpsFit fit_bmsfa(const MultiStudyDataset& ds, Index k, const std::vector<Index>& j, const McmcControl& ctrl,
                  const MgpsOptions& opts = {}, const ProgressFn& progress = {});

/// OP-aligned loading estimates and covariance summaries.
FitResult mgps_point_estimates(const MgpsFit& fit);

struct FactorCounts {
  Index k = 0;
  std::vector<Index> j;
};

/// Eigenvalue-share counts from the common and study-specific covariance
/// estimates (Stack FA: K only, Ind FA: J only).
FactorCounts evd_factor_counts(const FitResult& res, double threshold = 0.05);

}  // namespace bifa
