#pragma once

#include "bifa/dataset.hpp"
#include "bifa/priors.hpp"

#include <cstdint>
#include <vector>

namespace bifa {

/// Simulation settings. Presets 1-5 follow the published designs; `mini`
/// shrinks Scenario 4 to a tenth of its rows and Scenario 5 to 200 variables.
struct ScenarioSpec {
  int id = 1;
  std::vector<Index> n;           // rows per study, size S
  Index p = 40;
  Index k = 4;                    // common factors
  Index j = 0;                    // study-specific factors per study
  Index n_partial = 0;            // partially shared factors (Sc.4-5)
  double sparsity = 0.4;
  double load_lo = 0.6, load_hi = 1.0;
  double alpha_q = 0.01;          // Sc.1 perturbation level (entry sd of Q_s - I)
  Index q_cov = 0;                // observed covariates (Sc.2, Sc.4)
  double beta_sd = 0.1;           // covariate coefficient sd
  double a_sd = 0.4;              // Sc.3
  std::uint64_t seed = 0;

  Index num_studies() const { return static_cast<Index>(n.size()); }
  void validate() const;  // ConfigError

  static ScenarioSpec preset(int id, std::uint64_t seed = 0, bool mini = false);
};

struct GroundTruth {
  Matrix phi;                 // P x K common loadings
  MatrixList lambda;          // per study, empty when the scenario has none
  Matrix sigma_phi;
  MatrixList sigma_lambda;    // empty for Sc.2
  MatrixList sigma;           // marginal covariances
  VectorList psi;             // per study residual diagonals
  // Generator-specific extras.
  MatrixList q;               // Sc.1
  Matrix alpha;               // Sc.2: S x P intercepts
  Matrix beta;                // Sc.2, Sc.4: Q x P
  MatrixList a;               // Sc.3: K x J_s
  Matrix phi_star;            // Sc.4-5: P x K*
  IntMatrix sharing;          // Sc.4-5: S x K*

  bool has_lambda() const { return !lambda.empty(); }
};

struct Scenario {
  MultiStudyDataset data;
  GroundTruth truth;
};

Scenario generate_scenario(const ScenarioSpec& spec);

/// P x K matrix with round(sparsity * P * K) zeros and the rest
/// U(lo, hi) with a random sign.
Matrix sparse_signed_loadings(Index p, Index k, double sparsity, double lo, double hi, Rng& rng);

/// Per-study random split: round(frac * N_s) training rows, rest test.
struct Split {
  MultiStudyDataset train, test;
};
Split train_test_split(const MultiStudyDataset& ds, double train_frac, std::uint64_t seed);

}  // namespace bifa
