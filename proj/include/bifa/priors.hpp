#pragma once

#include "bifa/common.hpp"
#include "bifa/random.hpp"

namespace bifa {

using IntMatrix = Eigen::MatrixXi;

// ---------------------------------------------------------------------------
// Multiplicative gamma process shrinkage.

struct MgpsHyper {
  double kappa = 3.0;
  double a1 = 2.1;
  double a2 = 3.1;
};

class MgpsState {
 public:
  MgpsState() = default;
  /// omega = 1, delta = 1.
  MgpsState(Index p, Index k, MgpsHyper hyper = {});

  const Matrix& omega() const { return omega_; }
  const Vector& delta() const { return delta_; }
  const Vector& theta() const { return theta_; }
  const MgpsHyper& hyper() const { return hyper_; }
  Index rows() const { return omega_.rows(); }
  Index cols() const { return omega_.cols(); }

  void set(Matrix omega, Vector delta);

  /// Prior precision of each loading entry, omega_pk * theta_k.
  Matrix precision() const;

  /// Draw loadings from the prior given the current hyperparameters.
  Matrix sample_loadings(Rng& rng) const;

  /// Column bookkeeping for samplers whose column count changes. Appended
  /// columns get omega and delta drawn from their priors.
  void append_columns(Index n, Rng& rng);
  void remove_column(Index k);
  void keep_columns(const std::vector<Index>& cols);

 private:
  Matrix omega_;
  Vector delta_;
  Vector theta_;
  MgpsHyper hyper_;
};

/// Cumulative products theta_k = prod_{l<=k} delta_l.
Vector mgps_column_precisions(const Vector& delta);

/// One Gibbs sweep of the MGPS hyperparameters given loadings:
///   omega_pk ~ Gamma((kappa+1)/2, rate (kappa + theta_k phi_pk^2)/2)
///   delta_1  ~ Gamma(a1 + PK/2, 1 + 1/2 sum_k tau_k^(1) sum_p omega_pk phi_pk^2)
///   delta_h  ~ Gamma(a2 + P(K-h+1)/2, 1 + 1/2 sum_{k>=h} tau_k^(h) sum_p omega_pk phi_pk^2)
/// with tau_k^(h) = prod_{l<=k, l!=h} delta_l. omega is drawn first,
/// column-major.
void mgps_gibbs_update(MgpsState& state, const Matrix& loadings, Rng& rng);

// ---------------------------------------------------------------------------
// Dirichlet-Laplace, with row-shared local scales:
//   phi_pk ~ N(0, psi_pk omega_p^2 theta^2), psi_pk ~ Exp(1/2),
//   omega ~ Dir(a, ..., a), theta ~ Gamma(P a, 1/2).

struct DlState {
  Vector omega_dl;
  double theta_dl = 1.0;
  Matrix psi_aux;
  double a_dl = 0.5;

  static DlState init(Index p, Index k, double a_dl = 0.5);
  /// Prior variance of each loading entry.
  Matrix variance() const;
};

void dl_gibbs_update(DlState& state, const Matrix& loadings, Rng& rng);

/// Loadings drawn from the full DL hierarchy (fresh hyperparameters).
Matrix dl_sample_prior(Index p, Index k, double a_dl, Rng& rng);

// ---------------------------------------------------------------------------
// Non-local (product moment) spike-and-slab.

struct NlpSpikeSlabConfig {
  double tau0 = 0.026;
  double tau1 = 0.28;
  double a_zeta = 1.0;
  double b_zeta = 1.0;

  void validate() const;
};

/// log[(phi^2/tau1) N(phi; 0, tau1)]; -inf at phi = 0.
double nlp_slab_logdensity(double phi, double tau1);
double normal_logdensity(double x, double var);

// ---------------------------------------------------------------------------
// Two-parameter Indian buffet process.

struct IbpConfig {
  double alpha_t = 1.25;
  double beta_t = 1.0;

  static IbpConfig for_studies(Index s) { return {1.25 * static_cast<double>(s), 1.0}; }
  void validate() const;
};

/// S x K* binary matrix; every column has at least one 1.
IntMatrix ibp_sample_sharing(Index s, const IbpConfig& config, Rng& rng);

/// alpha * sum_{s=1..S} beta / (beta + s - 1).
double ibp_expected_columns(Index s, const IbpConfig& config);

}  // namespace bifa
