#pragma once

#include "bifa/dataset.hpp"
#include "bifa/mgps_gibbs.hpp"
#include "bifa/postprocess.hpp"
#include "bifa/priors.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace bifa {

// log psi ~ N(mu, s2) with E psi = 1 and var psi = 7:
// exp(s2) - 1 = 7 gives s2 = log 8, and mu + s2/2 = 0 gives mu = -s2/2.
inline const double kSufaLogPsiVar = std::log(8.0);
inline const double kSufaLogPsiMean = -0.5 * std::log(8.0);

struct SufaHmc {
  int steps = 20;
  double step_size = 0.0;    // 0: pick a starting value by the doubling heuristic
  double adapt_target = 0.8;
  bool adapt = true;         // dual averaging during burn-in
  bool adapt_mass = true;    // diagonal mass from burn-in draws
};

struct SufaOptions {
  double a_dl = 0.5;
  double sigma2_a = 1.0;
  double log_psi_mean = kSufaLogPsiMean;
  double log_psi_var = kSufaLogPsiVar;
  bool spread_remainder = false;  // give K mod S leftover columns to the first studies
  SufaHmc hmc;
  int threads = 1;                // per-study gradient workers
  double max_reject_share = 0.1;

  void validate() const;  // ConfigError
};

/// Unconstrained HMC coordinates.
struct SufaParams {
  Matrix phi;        // P x K
  MatrixList a;      // per study K x J_s
  Vector log_psi;    // P

  Index size() const;
  Vector pack() const;
  void unpack(const Vector& x);
};

/// Posterior draws of
///   y_is ~ N(0, Phi (I + A_s A_s') Phi' + Psi).
struct SufaFit {
  MatrixList phi_draws;
  std::vector<MatrixList> a_draws;  // [study][draw]
  VectorList psi_draws;             // shared across studies
  std::vector<double> dl_theta_draws;
  VectorList dl_omega_draws;
  std::vector<Index> j_alloc;
  double step_size = 0.0;
  double accept_rate = 0.0;         // mean acceptance after burn-in
  long rejections = 0;              // trajectories with a non-finite state
  long iterations = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  Index num_studies() const { return static_cast<Index>(j_alloc.size()); }
  Index num_draws() const { return static_cast<Index>(phi_draws.size()); }
  Matrix sigma_marginal_draw(Index s, Index t) const;
};

/// Smallest K whose leading singular values of the pooled, per-study
/// centered data explain `target` of the total, capped at qmax.
Index sufa_select_kmax(const MultiStudyDataset& ds, Index qmax, double target = 0.95);

/// floor(K / S) per study, optionally spreading the remainder.
std::vector<Index> sufa_default_j(Index k, Index studies, bool spread_remainder = false);

SufaFit fit_sufa(const MultiStudyDataset& ds, Index k, const std::vector<Index>& j, const McmcControl& ctrl,
                 const SufaOptions& opts = {}, const ProgressFn& progress = {});

/// Marginal Gaussian log-likelihood of all studies (Woodbury path).
double sufa_log_likelihood(const MultiStudyDataset& ds, const SufaParams& x);
/// Same value from dense covariance matrices.
double sufa_log_likelihood_dense(const MultiStudyDataset& ds, const SufaParams& x);
/// Gradient of `sufa_log_likelihood` in the unconstrained coordinates.
SufaParams sufa_log_likelihood_gradient(const MultiStudyDataset& ds, const SufaParams& x);

/// Point estimates from the trailing `window` share of the draws.
FitResult sufa_point_estimates(const SufaFit& fit, double window = 0.2);

/// Mean of Phi Phi' (+ Psi when `with_psi`) over the trailing window.
Matrix sufa_shared_covariance(const SufaFit& fit, bool with_psi = true, double window = 0.2);

}  // namespace bifa
