#pragma once

#include "bifa/dataset.hpp"
#include "bifa/postprocess.hpp"
#include "bifa/priors.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bifa {

enum class MomssInit { kPlain, kVarimax };

struct MomssOptions {
  NlpSpikeSlabConfig nlp;
  int max_iter = 500;
  double tol = 1e-6;            // relative log-posterior change
  double sigma2_reg = 1.0;      // N(0, sigma2_reg) on intercepts and coefficients
  double psi_shape = 0.5, psi_scale = 0.5;
  bool update_zeta = true;      // otherwise zeta_k stays at its prior mean
  double zeta_floor = 1e-6;     // updated zeta is kept in [floor, 1 - floor]
  int folds = 10;
  int cv_max_iter = 50;
  double tie_tol = 1e-8;        // relative score gap still counted as a tie
  std::optional<MomssInit> force_init;  // skip cross-validation
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
};

/// EM estimate of
///   y_is = alpha_s + beta x_is + Phi f_is + e_is,  e_is ~ N(0, Psi_s),
/// with the non-local spike-and-slab prior on Phi.
struct MomssFit {
  Matrix phi;              // P x K
  Matrix gamma_prob;       // P x K inclusion probabilities
  Vector zeta;             // K
  Matrix alpha;            // P x S
  Matrix beta;             // P x Q
  VectorList psi;          // per study
  std::vector<double> trace;
  MomssInit init_choice = MomssInit::kVarimax;
  double score_plain = 0.0, score_varimax = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

MomssFit fit_momss(const MultiStudyDataset& ds, Index k, const MomssOptions& opts = {});

struct MomssInitBundle {
  MomssInit choice = MomssInit::kVarimax;
  double score_plain = 0.0, score_varimax = 0.0;
  Matrix phi_plain, phi_varimax;  // P x K starting loadings
};

/// Builds both starts and scores each by held-out Gaussian log-likelihood
/// after a short EM run on the remaining folds.
MomssInitBundle momss_select_init(const MultiStudyDataset& ds, Index k, const MomssOptions& opts = {});

/// Per-study fold labels 0..folds-1, a seeded permutation of each study's rows.
std::vector<std::vector<int>> momss_fold_labels(const MultiStudyDataset& ds, int folds, std::uint64_t seed);

/// Columns whose largest inclusion probability reaches `threshold`.
Index momss_effective_k(const MomssFit& fit, double threshold = 0.5);

/// Log-posterior of the current parameters (the quantity EM increases).
double momss_log_posterior(const MultiStudyDataset& ds, const MomssFit& fit, const MomssOptions& opts = {});

/// Effective columns, ordered by their number of included loadings.
FitResult momss_point_estimates(const MomssFit& fit, double threshold = 0.5);

}  // namespace bifa
