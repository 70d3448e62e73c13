#include "bifa/priors.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace bifa {

MgpsState::MgpsState(Index p, Index k, MgpsHyper hyper)
    : omega_(Matrix::Ones(p, k)), delta_(Vector::Ones(k)), theta_(Vector::Ones(k)), hyper_(hyper) {}

void MgpsState::set(Matrix omega, Vector delta) {
  if (omega.cols() != delta.size()) throw DimensionError("mgps: omega/delta column mismatch");
  omega_ = std::move(omega);
  delta_ = std::move(delta);
  theta_ = mgps_column_precisions(delta_);
}

Matrix MgpsState::precision() const { return omega_ * theta_.asDiagonal(); }

Matrix MgpsState::sample_loadings(Rng& rng) const {
  Matrix out(omega_.rows(), omega_.cols());
  for (Index k = 0; k < omega_.cols(); ++k)
    for (Index p = 0; p < omega_.rows(); ++p) out(p, k) = rng.normal() / std::sqrt(omega_(p, k) * theta_(k));
  return out;
}

void MgpsState::append_columns(Index n, Rng& rng) {
  const Index p = omega_.rows();
  const Index k0 = omega_.cols();
  omega_.conservativeResize(p, k0 + n);
  delta_.conservativeResize(k0 + n);
  for (Index k = k0; k < k0 + n; ++k) {
    for (Index i = 0; i < p; ++i) omega_(i, k) = rng.gamma(hyper_.kappa / 2.0, hyper_.kappa / 2.0);
    delta_(k) = rng.gamma(k == 0 ? hyper_.a1 : hyper_.a2, 1.0);
  }
  theta_ = mgps_column_precisions(delta_);
}

void MgpsState::remove_column(Index k) {
  std::vector<Index> keep;
  for (Index j = 0; j < omega_.cols(); ++j)
    if (j != k) keep.push_back(j);
  keep_columns(keep);
}

void MgpsState::keep_columns(const std::vector<Index>& cols) {
  Matrix omega(omega_.rows(), static_cast<Index>(cols.size()));
  Vector delta(static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    omega.col(static_cast<Index>(j)) = omega_.col(cols[j]);
    delta(static_cast<Index>(j)) = delta_(cols[j]);
  }
  set(std::move(omega), std::move(delta));
}

Vector mgps_column_precisions(const Vector& delta) {
  Vector theta(delta.size());
  double acc = 1.0;
  for (Index k = 0; k < delta.size(); ++k) {
    acc *= delta(k);
    theta(k) = acc;
  }
  return theta;
}

void mgps_gibbs_update(MgpsState& state, const Matrix& loadings, Rng& rng) {
  if (!loadings.allFinite()) throw NumericError("mgps update: non-finite loadings");
  const Index p = loadings.rows();
  const Index k = loadings.cols();
  if (p != state.rows() || k != state.cols()) throw DimensionError("mgps update: loading shape mismatch");
  if (k == 0) return;
  const MgpsHyper& h = state.hyper();

  Matrix omega(p, k);
  const Vector& theta0 = state.theta();
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < p; ++i) {
      const double phi2 = loadings(i, j) * loadings(i, j);
      omega(i, j) = rng.gamma((h.kappa + 1.0) / 2.0, (h.kappa + theta0(j) * phi2) / 2.0);
    }

  // Column sums of omega * phi^2 feed every delta conditional.
  const Vector ssq = (omega.array() * loadings.array().square()).colwise().sum().transpose();
  Vector delta = state.delta();
  Vector theta = mgps_column_precisions(delta);
  const double pd = static_cast<double>(p);
  for (Index l = 0; l < k; ++l) {
    double acc = 0.0;
    for (Index j = l; j < k; ++j) acc += theta(j) / delta(l) * ssq(j);
    const double shape = (l == 0 ? h.a1 : h.a2) + 0.5 * pd * static_cast<double>(k - l);
    delta(l) = rng.gamma(shape, 1.0 + 0.5 * acc);
    theta = mgps_column_precisions(delta);
  }
  state.set(std::move(omega), std::move(delta));
}

DlState DlState::init(Index p, Index k, double a_dl) {
  DlState st;
  st.omega_dl = Vector::Constant(p, 1.0 / static_cast<double>(p));
  st.theta_dl = 1.0;
  st.psi_aux = Matrix::Ones(p, k);
  st.a_dl = a_dl;
  return st;
}

Matrix DlState::variance() const {
  Matrix v = psi_aux;
  for (Index i = 0; i < v.rows(); ++i) v.row(i) *= omega_dl(i) * omega_dl(i) * theta_dl * theta_dl;
  return v;
}

void dl_gibbs_update(DlState& state, const Matrix& loadings, Rng& rng) {
  if (!loadings.allFinite()) throw NumericError("dl update: non-finite loadings");
  const Index p = loadings.rows();
  const Index k = loadings.cols();
  if (p != state.omega_dl.size() || k != state.psi_aux.cols()) throw DimensionError("dl update: shape mismatch");
  constexpr double kJitter = 1e-10;
  const Matrix absphi = loadings.cwiseAbs().array() + kJitter;
  const Vector rowsum = absphi.rowwise().sum();
  const double a = state.a_dl;

  // Local scales, marginal of theta and psi: T_p ~ GIG(a - K, 1, 2 s_p).
  Vector t(p);
  for (Index i = 0; i < p; ++i) t(i) = rng.gig(a - static_cast<double>(k), 2.0 * rowsum(i), 1.0);
  state.omega_dl = t / t.sum();
  // Guard against exact zeros after normalization.
  for (Index i = 0; i < p; ++i) state.omega_dl(i) = std::max(state.omega_dl(i), std::numeric_limits<double>::min());
  state.omega_dl /= state.omega_dl.sum();

  // Global scale given locals.
  const double chi = 2.0 * (rowsum.array() / state.omega_dl.array()).sum();
  state.theta_dl = rng.gig(static_cast<double>(p) * a - static_cast<double>(p * k), chi, 1.0);

  // Auxiliary exponential scales through their inverse-Gaussian reciprocals.
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < p; ++i) {
      const double mu = state.omega_dl(i) * state.theta_dl / absphi(i, j);
      state.psi_aux(i, j) = 1.0 / rng.inv_gaussian(mu, 1.0);
    }
}

Matrix dl_sample_prior(Index p, Index k, double a_dl, Rng& rng) {
  const Vector omega = rng.dirichlet(Vector::Constant(p, a_dl));
  const double theta = rng.gamma(static_cast<double>(p) * a_dl, 0.5);
  Matrix out(p, k);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < p; ++i) {
      const double psi = rng.exponential(0.5);
      out(i, j) = rng.normal() * std::sqrt(psi) * omega(i) * theta;
    }
  return out;
}

void NlpSpikeSlabConfig::validate() const {
  if (!(tau0 > 0.0) || !(tau1 > tau0)) throw ConfigError("spike-and-slab: need 0 < tau0 < tau1");
  if (!(a_zeta > 0.0) || !(b_zeta > 0.0)) throw ConfigError("spike-and-slab: beta hyperparameters must be positive");
}

double normal_logdensity(double x, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * x * x / var;
}

double nlp_slab_logdensity(double phi, double tau1) {
  if (!(tau1 > 0.0)) throw DomainError("nlp slab: tau1 must be positive");
  if (phi == 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(phi * phi / tau1) + normal_logdensity(phi, tau1);
}

void IbpConfig::validate() const {
  if (!(alpha_t > 0.0) || !(beta_t > 0.0)) throw ConfigError("ibp: alpha and beta must be positive");
}

IntMatrix ibp_sample_sharing(Index s, const IbpConfig& config, Rng& rng) {
  config.validate();
  if (s < 1) throw DimensionError("ibp: need at least one study");
  std::vector<std::vector<int>> cols;
  std::vector<int> counts;
  for (Index i = 0; i < s; ++i) {
    const double denom = config.beta_t + static_cast<double>(i);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const int take = rng.uniform() < counts[k] / denom ? 1 : 0;
      cols[k][static_cast<std::size_t>(i)] = take;
      counts[k] += take;
    }
    const auto fresh = rng.poisson(config.alpha_t * config.beta_t / denom);
    for (std::uint64_t n = 0; n < fresh; ++n) {
      std::vector<int> c(static_cast<std::size_t>(s), 0);
      c[static_cast<std::size_t>(i)] = 1;
      cols.push_back(std::move(c));
      counts.push_back(1);
    }
  }
  IntMatrix out(s, static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k)
    for (Index i = 0; i < s; ++i) out(i, static_cast<Index>(k)) = cols[k][static_cast<std::size_t>(i)];
  return out;
}

double ibp_expected_columns(Index s, const IbpConfig& config) {
  double acc = 0.0;
  for (Index i = 0; i < s; ++i) acc += config.beta_t / (config.beta_t + static_cast<double>(i));
  return config.alpha_t * acc;
}

}  // namespace bifa
