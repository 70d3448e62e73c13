#include "bifa/momss.hpp"

#include "bifa/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace bifa {

void MomssOptions::validate() const {
  nlp.validate();
  if (max_iter < 1 || cv_max_iter < 1) throw ConfigError("momss: iteration limits must be positive");
  if (!(tol > 0.0)) throw ConfigError("momss: tol must be positive");
  if (!(sigma2_reg > 0.0) || !(psi_shape > 0.0) || !(psi_scale > 0.0)) throw ConfigError("momss: prior scales must be positive");
  if (!(zeta_floor > 0.0 && zeta_floor < 0.5)) throw ConfigError("momss: zeta floor must lie in (0, 0.5)");
  if (folds < 2) throw ConfigError("momss: need at least two folds");
}

namespace {

Index covariate_count(const MultiStudyDataset& ds) { return ds.has_covariates() ? ds.num_covariates() : 0; }

Matrix centered_residual(const MultiStudyDataset& ds, const MomssFit& m, Index s) {
  const auto su = static_cast<std::size_t>(s);
  Matrix r = ds.studies[su];
  r.rowwise() -= m.alpha.col(s).transpose();
  if (m.beta.cols() > 0) r -= ds.covariates[su] * m.beta.transpose();
  return r;
}

double log_mixture_prior(double phi, double zeta, const NlpSpikeSlabConfig& c) {
  const double spike = std::log1p(-zeta) + normal_logdensity(phi, c.tau0);
  const double slab = std::log(zeta) + nlp_slab_logdensity(phi, c.tau1);
  const double hi = std::max(spike, slab);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log(std::exp(spike - hi) + std::exp(slab - hi));
}

Matrix responsibilities(const Matrix& phi, const Vector& zeta, const NlpSpikeSlabConfig& c) {
  Matrix r(phi.rows(), phi.cols());
  for (Index k = 0; k < phi.cols(); ++k)
    for (Index p = 0; p < phi.rows(); ++p) {
      const double slab = std::log(zeta(k)) + nlp_slab_logdensity(phi(p, k), c.tau1);
      const double spike = std::log1p(-zeta(k)) + normal_logdensity(phi(p, k), c.tau0);
      r(p, k) = 1.0 / (1.0 + std::exp(spike - slab));
    }
  return r;
}

// Gaussian log-likelihood of the rows of `resid` under Phi Phi' + diag(psi).
double gaussian_loglik(const Matrix& resid, const Matrix& phi, const Vector& psi) {
  const Index n = resid.rows(), p = resid.cols(), k = phi.cols();
  const Vector ipsi = psi.cwiseInverse();
  const Matrix w = ipsi.asDiagonal() * phi;
  Matrix m = Matrix::Identity(k, k) + phi.transpose() * w;
  const auto llt = robust_llt(m);
  const double logdet = psi.array().log().sum() + 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  // tr(Sigma^{-1} R'R) by Woodbury.
  const Matrix rw = resid * w;  // N x K
  const double quad = (resid.array().square().rowwise() * ipsi.transpose().array()).sum() -
                      (rw.transpose().cwiseProduct(llt.solve(rw.transpose()))).sum();
  return -0.5 * (static_cast<double>(n * p) * std::log(2.0 * std::numbers::pi) + static_cast<double>(n) * logdet + quad);
}

double log_posterior(const MultiStudyDataset& ds, const MomssFit& m, const MomssOptions& o) {
  double lp = 0.0;
  for (Index s = 0; s < ds.num_studies(); ++s)
    lp += gaussian_loglik(centered_residual(ds, m, s), m.phi, m.psi[static_cast<std::size_t>(s)]);
  for (Index k = 0; k < m.phi.cols(); ++k) {
    for (Index p = 0; p < m.phi.rows(); ++p) lp += log_mixture_prior(m.phi(p, k), m.zeta(k), o.nlp);
    const double a = o.nlp.a_zeta / static_cast<double>(k + 1);
    lp += (a - 1.0) * std::log(m.zeta(k)) + (o.nlp.b_zeta - 1.0) * std::log1p(-m.zeta(k));
  }
  lp -= 0.5 * (m.alpha.squaredNorm() + m.beta.squaredNorm()) / o.sigma2_reg;
  for (const auto& v : m.psi) lp += (-(o.psi_shape + 1.0) * v.array().log() - o.psi_scale * v.array().inverse()).sum();
  return lp;
}

// argmax over [lo, 1 - lo] of A log z + B log(1 - z).
double best_zeta(double a, double b, double lo) {
  auto g = [&](double z) { return a * std::log(z) + b * std::log1p(-z); };
  double best = lo, val = g(lo);
  if (g(1.0 - lo) > val) {
    best = 1.0 - lo;
    val = g(best);
  }
  if (a > 0.0 && b > 0.0) {
    const double z = std::clamp(a / (a + b), lo, 1.0 - lo);
    if (g(z) > val) best = z;
  }
  return best;
}

// Maximizer over phi of -0.5 a phi^2 + c phi + 2 g log|phi| (g in [0, 1]).
// Stationary points solve a phi^2 - c phi - 2 g = 0.
double coordinate_max(double a, double c, double g) {
  if (g <= 0.0) return c / a;
  const double disc = std::sqrt(c * c + 8.0 * a * g);
  const double r1 = (c + disc) / (2.0 * a), r2 = (c - disc) / (2.0 * a);
  auto h = [&](double x) { return -0.5 * a * x * x + c * x + 2.0 * g * std::log(std::abs(x)); };
  return h(r1) >= h(r2) ? r1 : r2;
}

struct EStep {
  MatrixList ef;    // N_s x K
  MatrixList cov;   // K x K posterior covariance per study
};

EStep e_step(const MultiStudyDataset& ds, const MomssFit& m) {
  EStep e;
  const Index k = m.phi.cols();
  for (Index s = 0; s < ds.num_studies(); ++s) {
    const Vector ipsi = m.psi[static_cast<std::size_t>(s)].cwiseInverse();
    const Matrix w = ipsi.asDiagonal() * m.phi;
    const auto llt = robust_llt(Matrix::Identity(k, k) + m.phi.transpose() * w);
    e.cov.push_back(llt.solve(Matrix::Identity(k, k)));
    e.ef.push_back(llt.solve((centered_residual(ds, m, s) * w).transpose()).transpose());
  }
  return e;
}

void m_step_regression(const MultiStudyDataset& ds, MomssFit& m, const EStep& e, double sigma2) {
  const Index s_count = ds.num_studies(), p = m.phi.rows(), q = m.beta.cols();
  MatrixList z;
  for (Index s = 0; s < s_count; ++s) z.push_back(ds.studies[static_cast<std::size_t>(s)] - e.ef[static_cast<std::size_t>(s)] * m.phi.transpose());
  if (q == 0) {
    for (Index s = 0; s < s_count; ++s) {
      const auto su = static_cast<std::size_t>(s);
      const double n = static_cast<double>(z[su].rows());
      for (Index j = 0; j < p; ++j) {
        const double ip = 1.0 / m.psi[su](j);
        m.alpha(j, s) = ip * z[su].col(j).sum() / (n * ip + 1.0 / sigma2);
      }
    }
    return;
  }
  MatrixList xtx;
  std::vector<Vector> xsum;
  for (Index s = 0; s < s_count; ++s) {
    const Matrix& x = ds.covariates[static_cast<std::size_t>(s)];
    xtx.push_back(x.transpose() * x);
    xsum.push_back(x.colwise().sum().transpose());
  }
  const Index d = s_count + q;
  for (Index j = 0; j < p; ++j) {
    Matrix a = Matrix::Zero(d, d);
    Vector b = Vector::Zero(d);
    for (Index s = 0; s < s_count; ++s) {
      const auto su = static_cast<std::size_t>(s);
      const double ip = 1.0 / m.psi[su](j);
      const Matrix& x = ds.covariates[su];
      a(s, s) += ip * static_cast<double>(x.rows());
      a.block(s, s_count, 1, q) += ip * xsum[su].transpose();
      a.block(s_count, s, q, 1) += ip * xsum[su];
      a.bottomRightCorner(q, q) += ip * xtx[su];
      b(s) += ip * z[su].col(j).sum();
      b.tail(q) += ip * x.transpose() * z[su].col(j);
    }
    a.diagonal().array() += 1.0 / sigma2;
    const Vector sol = robust_llt(a).solve(b);
    m.alpha.row(j) = sol.head(s_count).transpose();
    m.beta.row(j) = sol.tail(q).transpose();
  }
}

void m_step_loadings(const MultiStudyDataset& ds, MomssFit& m, const EStep& e, const Matrix& r,
                     const NlpSpikeSlabConfig& c) {
  const Index s_count = ds.num_studies(), p = m.phi.rows(), k = m.phi.cols();
  MatrixList sff, sfy;
  for (Index s = 0; s < s_count; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const Matrix& ef = e.ef[su];
    sff.push_back(static_cast<double>(ef.rows()) * e.cov[su] + ef.transpose() * ef);
    sfy.push_back(ef.transpose() * centered_residual(ds, m, s));  // K x P
  }
  for (Index j = 0; j < p; ++j) {
    Matrix a = Matrix::Zero(k, k);
    Vector b = Vector::Zero(k);
    for (Index s = 0; s < s_count; ++s) {
      const auto su = static_cast<std::size_t>(s);
      const double ip = 1.0 / m.psi[su](j);
      a += ip * sff[su];
      b += ip * sfy[su].col(j);
    }
    for (Index kk = 0; kk < k; ++kk) {
      const double g = r(j, kk);
      const double curv = a(kk, kk) + (1.0 - g) / c.tau0 + g / c.tau1;
      const double lin = b(kk) - a.row(kk).dot(m.phi.row(j)) + a(kk, kk) * m.phi(j, kk);
      m.phi(j, kk) = coordinate_max(curv, lin, g);
    }
  }
}

void m_step_psi(const MultiStudyDataset& ds, MomssFit& m, const EStep& e, const MomssOptions& o) {
  for (Index s = 0; s < ds.num_studies(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    const Matrix resid = centered_residual(ds, m, s) - e.ef[su] * m.phi.transpose();
    const double n = static_cast<double>(resid.rows());
    const Vector spread = (m.phi * e.cov[su]).cwiseProduct(m.phi).rowwise().sum() * n;
    const Vector sse = resid.colwise().squaredNorm().transpose() + spread;
    m.psi[su] = ((o.psi_scale + 0.5 * sse.array()) / (o.psi_shape + 1.0 + 0.5 * n)).matrix();
  }
}

void m_step_zeta(MomssFit& m, const Matrix& r, const MomssOptions& o) {
  const double p = static_cast<double>(m.phi.rows());
  for (Index k = 0; k < m.phi.cols(); ++k) {
    const double a = o.nlp.a_zeta / static_cast<double>(k + 1);
    const double included = r.col(k).sum();
    m.zeta(k) = best_zeta(included + a - 1.0, p - included + o.nlp.b_zeta - 1.0, o.zeta_floor);
  }
}

// Runs EM in place; returns whether the tolerance was met.
bool run_em(const MultiStudyDataset& ds, MomssFit& m, const MomssOptions& o, int max_iter) {
  m.trace.push_back(log_posterior(ds, m, o));
  int drops = 0;
  for (int it = 0; it < max_iter; ++it) {
    const EStep e = e_step(ds, m);
    const Matrix r = responsibilities(m.phi, m.zeta, o.nlp);
    m_step_regression(ds, m, e, o.sigma2_reg);
    m_step_loadings(ds, m, e, r, o.nlp);
    m_step_psi(ds, m, e, o);
    if (o.update_zeta) m_step_zeta(m, r, o);
    const double lp = log_posterior(ds, m, o);
    if (!std::isfinite(lp)) throw NumericError("momss: non-finite log-posterior at iteration " + std::to_string(it + 1));
    const double prev = m.trace.back();
    m.trace.push_back(lp);
    ++m.iterations;
    if (lp < prev - 1e-6) {
      if (++drops >= 3) {
        std::string msg = "momss: log-posterior decreased for 3 iterations; trace tail:";
        for (std::size_t i = m.trace.size() >= 5 ? m.trace.size() - 5 : 0; i < m.trace.size(); ++i)
          msg += " " + std::to_string(m.trace[i]);
        throw NumericError(msg);
      }
    } else {
      drops = 0;
    }
    if (std::abs(lp - prev) < o.tol * std::abs(prev)) return true;
  }
  return false;
}

// Least-squares intercepts and coefficients, then spectral loadings of the
// pooled residual covariance.
MomssFit ls_start(const MultiStudyDataset& ds, Index k, bool rotate, const MomssOptions& o) {
  const Index s_count = ds.num_studies(), p = ds.num_vars(), q = covariate_count(ds);
  MomssFit m;
  m.alpha = Matrix::Zero(p, s_count);
  m.beta = Matrix::Zero(p, q);
  m.phi = Matrix::Zero(p, k);
  m.psi.assign(static_cast<std::size_t>(s_count), Vector::Ones(p));
  m.zeta.resize(k);
  for (Index j = 0; j < k; ++j) {
    const double a = o.nlp.a_zeta / static_cast<double>(j + 1);
    m.zeta(j) = a / (a + o.nlp.b_zeta);
  }
  // Regression without factors: the no-factor EM step with unit variances.
  EStep none;
  for (Index s = 0; s < s_count; ++s) {
    none.ef.push_back(Matrix::Zero(ds.studies[static_cast<std::size_t>(s)].rows(), k));
    none.cov.push_back(Matrix::Zero(k, k));
  }
  m_step_regression(ds, m, none, 1e12);
  Matrix pooled = Matrix::Zero(p, p);
  Index n = 0;
  MatrixList resid;
  for (Index s = 0; s < s_count; ++s) {
    resid.push_back(centered_residual(ds, m, s));
    pooled += cross_product(resid.back());
    n += resid.back().rows();
  }
  pooled /= static_cast<double>(n);
  m.phi = spectral_loadings(pooled, k);
  if (rotate) m.phi = varimax(m.phi).loadings;
  const Vector common = m.phi.rowwise().squaredNorm();
  for (Index s = 0; s < s_count; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const Vector var = resid[su].colwise().squaredNorm().transpose() / static_cast<double>(resid[su].rows());
    for (Index j = 0; j < p; ++j) m.psi[su](j) = std::max({var(j) - common(j), 0.05 * var(j), 1e-4});
  }
  return m;
}

MultiStudyDataset fold_subset(const MultiStudyDataset& ds, const std::vector<std::vector<int>>& labels, int fold,
                              bool keep) {
  MatrixList ys, xs;
  for (Index s = 0; s < ds.num_studies(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    std::vector<Index> rows;
    for (std::size_t i = 0; i < labels[su].size(); ++i)
      if ((labels[su][i] == fold) == keep) rows.push_back(static_cast<Index>(i));
    Matrix y(static_cast<Index>(rows.size()), ds.num_vars());
    for (std::size_t i = 0; i < rows.size(); ++i) y.row(static_cast<Index>(i)) = ds.studies[su].row(rows[i]);
    ys.push_back(std::move(y));
    if (ds.has_covariates()) {
      Matrix x(static_cast<Index>(rows.size()), ds.num_covariates());
      for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Index>(i)) = ds.covariates[su].row(rows[i]);
      xs.push_back(std::move(x));
    }
  }
  return make_dataset(std::move(ys), std::move(xs));
}

double cv_score(const MultiStudyDataset& ds, Index k, bool rotate, const MomssOptions& o,
                const std::vector<std::vector<int>>& labels) {
  double total = 0.0;
  for (int f = 0; f < o.folds; ++f) {
    const MultiStudyDataset train = fold_subset(ds, labels, f, false);
    const MultiStudyDataset test = fold_subset(ds, labels, f, true);
    MomssFit m = ls_start(train, k, rotate, o);
    run_em(train, m, o, o.cv_max_iter);
    for (Index s = 0; s < test.num_studies(); ++s)
      if (test.studies[static_cast<std::size_t>(s)].rows() > 0)
        total += gaussian_loglik(centered_residual(test, m, s), m.phi, m.psi[static_cast<std::size_t>(s)]);
  }
  return total;
}

void check_dims(const MultiStudyDataset& ds, Index k) {
  ds.validate();
  if (k < 1) throw DimensionError("momss: K must be at least 1");
  const Index limit = std::min(ds.total_rows() - 1, ds.num_vars());
  if (k > limit) throw DimensionError("momss: K = " + std::to_string(k) + " exceeds min(N - 1, P) = " + std::to_string(limit));
}

}  // namespace

std::vector<std::vector<int>> momss_fold_labels(const MultiStudyDataset& ds, int folds, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  for (const auto& y : ds.studies) {
    std::vector<int> lab(static_cast<std::size_t>(y.rows()));
    for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = static_cast<int>(i % static_cast<std::size_t>(folds));
    std::shuffle(lab.begin(), lab.end(), rng.engine());
    out.push_back(std::move(lab));
  }
  return out;
}

MomssInitBundle momss_select_init(const MultiStudyDataset& ds, Index k, const MomssOptions& opts) {
  opts.validate();
  check_dims(ds, k);
  if (ds.total_rows() < 10) throw DimensionError("momss: cross-validation needs at least 10 rows");
  MomssInitBundle b;
  b.phi_plain = ls_start(ds, k, false, opts).phi;
  b.phi_varimax = ls_start(ds, k, true, opts).phi;
  const auto labels = momss_fold_labels(ds, opts.folds, opts.seed);
  b.score_plain = cv_score(ds, k, false, opts, labels);
  b.score_varimax = cv_score(ds, k, true, opts, labels);
  const double slack = opts.tie_tol * std::max(1.0, std::abs(b.score_plain));
  b.choice = b.score_plain > b.score_varimax + slack ? MomssInit::kPlain : MomssInit::kVarimax;
  return b;
}

MomssFit fit_momss(const MultiStudyDataset& ds, Index k, const MomssOptions& opts) {
  opts.validate();
  check_dims(ds, k);
  MomssInit choice;
  double sp = 0.0, sv = 0.0;
  if (opts.force_init) {
    choice = *opts.force_init;
  } else {
    const MomssInitBundle b = momss_select_init(ds, k, opts);
    choice = b.choice;
    sp = b.score_plain;
    sv = b.score_varimax;
  }
  MomssFit m = ls_start(ds, k, choice == MomssInit::kVarimax, opts);
  m.init_choice = choice;
  m.score_plain = sp;
  m.score_varimax = sv;
  m.converged = run_em(ds, m, opts, opts.max_iter);
  if (!m.converged) m.warnings.push_back("EM stopped at max_iter before reaching tol");
  m.gamma_prob = responsibilities(m.phi, m.zeta, opts.nlp);
  return m;
}

double momss_log_posterior(const MultiStudyDataset& ds, const MomssFit& fit, const MomssOptions& opts) {
  return log_posterior(ds, fit, opts);
}

Index momss_effective_k(const MomssFit& fit, double threshold) {
  Index n = 0;
  for (Index k = 0; k < fit.gamma_prob.cols(); ++k)
    if (fit.gamma_prob.col(k).maxCoeff() >= threshold) ++n;
  return n;
}

FitResult momss_point_estimates(const MomssFit& fit, double threshold) {
  std::vector<Index> keep;
  for (Index k = 0; k < fit.gamma_prob.cols(); ++k)
    if (fit.gamma_prob.col(k).maxCoeff() >= threshold) keep.push_back(k);
  auto included = [&](Index k) { return (fit.gamma_prob.col(k).array() >= threshold).count(); };
  std::stable_sort(keep.begin(), keep.end(), [&](Index a, Index b) { return included(a) > included(b); });
  FitResult res;
  res.method = "momss";
  res.warnings = fit.warnings;
  res.provenance = {fit.iterations, 0, "none"};
  res.phi = Matrix(fit.phi.rows(), static_cast<Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) res.phi.col(static_cast<Index>(j)) = fit.phi.col(keep[j]);
  res.k_hat = res.phi.cols();
  res.sigma_phi = res.phi * res.phi.transpose();
  res.psi = fit.psi;
  for (const auto& v : fit.psi) res.sigma_marginal.push_back(res.sigma_phi + Matrix(v.asDiagonal()));
  res.validate();
  return res;
}

}  // namespace bifa
