#pragma once

#include "bifa/dataset.hpp"
#include "bifa/fa_kernel.hpp"
#include "bifa/mgps_gibbs.hpp"
#include "bifa/postprocess.hpp"
#include "bifa/priors.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bifa {

/// Binary study-by-factor sharing matrix. Column k is common when every
/// study uses it; R_s = T_s - P keeps the rest of study s's columns.
class SharingMatrix {
 public:
  SharingMatrix() = default;
  explicit SharingMatrix(IntMatrix t);  // DomainError unless binary with no empty column

  const IntMatrix& matrix() const { return t_; }
  Index studies() const { return t_.rows(); }
  Index cols() const { return t_.cols(); }

  std::vector<bool> common() const;
  std::vector<bool> selector(Index s) const;  // diagonal of T_s
  std::vector<bool> residual(Index s) const;  // diagonal of R_s
  Index num_common() const;
  std::vector<Index> num_specific() const;    // ones in row s minus the common count

  /// Columns sorted by their binary pattern, read top row first, largest first.
  SharingMatrix canonical() const;

  bool operator==(const SharingMatrix& o) const {
    return t_.rows() == o.t_.rows() && t_.cols() == o.t_.cols() && t_ == o.t_;
  }

 private:
  IntMatrix t_;
};

/// Entrywise disagreements after canonical ordering; the narrower matrix is
/// padded with empty columns.
Index sharing_hamming(const SharingMatrix& a, const SharingMatrix& b);

/// The draw with the most draws within `radius`; ties go to the earliest.
SharingMatrix choose_sharing_mode(const std::vector<SharingMatrix>& draws, Index radius);

/// log N(Y_s; 0, L L' + diag(psi)) from the Gram matrix C = Y_s' Y_s.
double tetris_collapsed_loglik(const Matrix& gram, double n, const Vector& psi, const Matrix& loadings);

/// Fixed continuous parameters for MH moves on the sharing matrix.
struct TetrisFlipModel {
  MatrixList gram;
  std::vector<double> n;
  Matrix loadings;   // P x K*
  VectorList psi;    // per study
  IbpConfig ibp;
};

/// One pass of single-entry MH flips over every (s, k) whose column is used
/// by some other study. Returns the number of accepted flips.
int tetris_flip_sweep(const TetrisFlipModel& model, IntMatrix& t, Rng& rng);

struct TetrisOptions {
  std::optional<IbpConfig> ibp;       // default: alpha = 1.25 S, beta = 1
  MgpsHyper hyper;
  PsiPrior psi_prior;
  Index k_init = 0;                   // 0: IBP expected column count, at most P
  double cap_factor = 5.0;            // runaway cap cap_factor * S * k_init
  Index mode_radius = -1;             // -1: floor(0.1 * S * median K*)
  std::optional<McmcControl> refit;   // defaults to the phase-1 control
  std::optional<SharingMatrix> fixed_t;
  std::string checkpoint_path;        // empty: no checkpoints
  long checkpoint_every = 0;          // iterations; 0: only on budget stop
  double time_budget_seconds = 0.0;   // 0: unlimited
  bool resume = false;                // continue phase 1 from checkpoint_path
};

struct TetrisFit {
  std::vector<SharingMatrix> t_draws;  // phase 1
  std::vector<Index> k_trace;          // K* per phase-1 iteration
  long births_accepted = 0, flips_accepted = 0;
  Index radius = 0;
  SharingMatrix t_hat;
  MatrixList phi_star_draws;           // phase 3, P x K*
  std::vector<VectorList> psi_draws;   // [study][draw]
  bool phase1_complete = true;         // false when stopped by the time budget
  long iterations = 0;                 // phase-1 iterations run
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  Index num_draws() const { return static_cast<Index>(phi_star_draws.size()); }
};

TetrisFit fit_tetris(const MultiStudyDataset& ds, const McmcControl& ctrl, const TetrisOptions& opts = {},
                     const ProgressFn& progress = {});

/// Common, study-specific and marginal summaries from the phase-3 draws.
FitResult tetris_decompose(const TetrisFit& fit);

}  // namespace bifa
