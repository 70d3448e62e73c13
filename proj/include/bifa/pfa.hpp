#pragma once

#include "bifa/mgps_gibbs.hpp"

#include <optional>

namespace bifa {

struct PfaOptions {
  MgpsHyper hyper;
  PsiPrior psi_prior{0.1, 0.1};
  double a_nu = 10.0, b_nu = 0.1;          // IG prior on factor variances
  double alpha_shape = 0.1, alpha_scale = 0.1;  // IG prior on alpha_Q^2
  std::optional<double> alpha_q;           // fixed perturbation scale
  double cutoff = 1e-3;                    // column mean |loading| below this is dropped
  double truncation_start = 0.2;           // fraction of nrun before pruning begins
  bool allow_large_p = false;              // P > 512 is refused otherwise
};

/// Posterior draws of the perturbed factor model
///   Q_s y_is = Phi f_is + e_is,  f_is ~ N(0, V),  e_is ~ N(0, Psi),
/// with Q_1 = I and (Q_s - I) entries N(0, alpha_Q^2) for s > 1.
struct PfaFit {
  MatrixList phi_draws;               // P x K_t
  VectorList v_draws;                 // K_t
  VectorList psi_draws;               // shared, length P
  std::vector<MatrixList> q_draws;    // [study][draw]; empty when S = 1
  std::vector<double> alpha_q_draws;  // empty when S = 1
  std::vector<Index> k_trace;         // column count after every iteration
  long q_rejections = 0;              // ill-conditioned Q_s updates rejected
  long iterations = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  Index num_draws() const { return static_cast<Index>(phi_draws.size()); }
  Index num_studies() const { return q_draws.empty() ? 1 : static_cast<Index>(q_draws.size()); }
};

PfaFit fit_pfa(const MultiStudyDataset& ds, Index k, const McmcControl& ctrl, const PfaOptions& opts = {},
               const ProgressFn& progress = {});

/// Most frequent column count among the stored draws (smallest on ties).
/// One Gibbs pass over the rows of Q for the target density
///   prod_r N(q_r; e_r, alpha2 I) prod_i N(Q y_i; target_i, diag(psi)) |det Q|^N,
/// restricted to det Q > 0, which `q` must satisfy on entry.
void pfa_update_perturbation(const Matrix& y, const Matrix& target, const Vector& psi, double alpha2, Matrix& q,
                             Rng& rng);

Index pfa_modal_k(const PfaFit& fit);

struct PfaCovariances {
  Matrix sigma_phi;            // mean of Phi V Phi' + Psi
  MatrixList sigma;            // mean of Q_s^{-1} (Phi V Phi' + Psi) Q_s^{-T}
  MatrixList sigma_lambda;     // sigma_s - sigma_phi
  Index k = 0;
  Index draws_used = 0;
};

/// Covariance summaries over the draws with the modal column count.
PfaCovariances pfa_study_covariances(const PfaFit& fit);

/// Point estimates: OP-aligned Phi V^{1/2} over the modal-K draws and the
/// covariance summaries above. Study-specific loadings are left empty.
FitResult pfa_point_estimates(const PfaFit& fit);

/// (Q_s^{-1} - I) Phi V^{1/2} averaged over modal-K draws. Experimental: the
/// reference study always gets zero loadings, so these are not comparable
/// across methods.
MatrixList pfa_experimental_specific_loadings(const PfaFit& fit);

}  // namespace bifa
