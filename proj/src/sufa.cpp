#include "bifa/sufa.hpp"

#include "bifa/linalg.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <numeric>

namespace bifa {

void SufaOptions::validate() const {
  if (!(a_dl > 0.0)) throw ConfigError("sufa: a_dl must be positive");
  if (!(sigma2_a > 0.0) || !(log_psi_var > 0.0)) throw ConfigError("sufa: prior variances must be positive");
  if (hmc.steps < 1) throw ConfigError("sufa: need at least one leapfrog step");
  if (!(hmc.step_size >= 0.0)) throw ConfigError("sufa: step size must be non-negative");
  if (!(hmc.adapt_target > 0.0 && hmc.adapt_target < 1.0)) throw ConfigError("sufa: adapt target must lie in (0, 1)");
  if (threads < 1) throw ConfigError("sufa: threads must be >= 1");
  if (!(max_reject_share > 0.0 && max_reject_share <= 1.0)) throw ConfigError("sufa: reject share must lie in (0, 1]");
}

Index SufaParams::size() const {
  Index n = phi.size() + log_psi.size();
  for (const auto& m : a) n += m.size();
  return n;
}

Vector SufaParams::pack() const {
  Vector x(size());
  Index o = 0;
  x.segment(o, phi.size()) = phi.reshaped();
  o += phi.size();
  for (const auto& m : a) {
    x.segment(o, m.size()) = m.reshaped();
    o += m.size();
  }
  x.segment(o, log_psi.size()) = log_psi;
  return x;
}

void SufaParams::unpack(const Vector& x) {
  if (x.size() != size()) throw DimensionError("sufa: packed vector has the wrong length");
  Index o = 0;
  phi.reshaped() = x.segment(o, phi.size());
  o += phi.size();
  for (auto& m : a) {
    m.reshaped() = x.segment(o, m.size());
    o += m.size();
  }
  log_psi = x.segment(o, log_psi.size());
}

Matrix SufaFit::sigma_marginal_draw(Index s, Index t) const {
  const auto tu = static_cast<std::size_t>(t);
  const Matrix& phi = phi_draws[tu];
  const Matrix l = phi * a_draws[static_cast<std::size_t>(s)][tu];
  Matrix out = phi * phi.transpose() + l * l.transpose();
  out.diagonal() += psi_draws[tu];
  return out;
}

namespace {

struct Stats {
  MatrixList gram;
  std::vector<double> n;
};

Stats make_stats(const MultiStudyDataset& ds) {
  Stats st;
  for (const auto& y : ds.studies) {
    st.gram.push_back(cross_product(y));
    st.n.push_back(static_cast<double>(y.rows()));
  }
  return st;
}

struct StudyTerm {
  double ll = 0.0;
  Matrix gphi, ga;
  Vector gpsi;  // d/d psi
};

// Sigma = L L' + Psi with L = Phi chol(I + A A').
StudyTerm study_term(const Matrix& c, double n, const Matrix& phi, const Matrix& a, const Vector& psi, bool grad) {
  const Index p = phi.rows(), k = phi.cols();
  StudyTerm out;
  Matrix h = Matrix::Identity(k, k);
  if (a.cols() > 0) h.noalias() += a * a.transpose();
  const Matrix l = phi * h.llt().matrixL().toDenseMatrix();
  const Vector ipsi = psi.cwiseInverse();
  const Matrix u = ipsi.asDiagonal() * l;
  Matrix m = Matrix::Identity(k, k);
  m.noalias() += l.transpose() * u;
  const Eigen::LLT<Matrix> mllt(m);
  if (mllt.info() != Eigen::Success) {
    out.ll = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const Matrix ml = mllt.matrixL();
  const double logdet = psi.array().log().sum() + 2.0 * ml.diagonal().array().log().sum();
  const Matrix cu = c * u;
  const Matrix utcu = u.transpose() * cu;
  const Matrix minv = mllt.solve(Matrix::Identity(k, k));
  const double tr = (c.diagonal().array() * ipsi.array()).sum() - (minv.cwiseProduct(utcu)).sum();
  out.ll = -0.5 * (n * static_cast<double>(p) * std::log(2.0 * std::numbers::pi) + n * logdet + tr);
  if (!grad) return out;

  const Matrix v = u * minv;  // P x K
  auto apply_w = [&](const Matrix& x) -> Matrix { return ipsi.asDiagonal() * x - v * (u.transpose() * x); };
  const Matrix wphi = apply_w(phi);
  const Matrix wcwphi = apply_w(c * wphi);
  const Matrix gphi = -0.5 * (n * wphi - wcwphi);  // dll/dSigma times Phi
  out.gphi = 2.0 * gphi * h;
  out.ga = a.cols() > 0 ? Matrix(2.0 * phi.transpose() * gphi * a) : Matrix(k, 0);
  const Vector diag_w = ipsi - v.cwiseProduct(u).rowwise().sum();
  const Vector diag_wcw = c.diagonal().cwiseProduct(ipsi.cwiseAbs2()) -
                          2.0 * ipsi.cwiseProduct(cu.cwiseProduct(v).rowwise().sum()) +
                          (v * utcu).cwiseProduct(v).rowwise().sum();
  out.gpsi = -0.5 * (n * diag_w - diag_wcw);
  return out;
}

struct Eval {
  double value = 0.0;
  Vector grad;
};

Eval likelihood(const Stats& st, const SufaParams& x, bool grad, int threads) {
  const Vector psi = x.log_psi.array().exp();
  const std::size_t s_count = st.gram.size();
  std::vector<StudyTerm> terms(s_count);
  if (threads > 1 && s_count > 1) {
    std::vector<std::future<StudyTerm>> jobs;
    for (std::size_t s = 0; s < s_count; ++s)
      jobs.push_back(std::async(std::launch::async, [&, s] { return study_term(st.gram[s], st.n[s], x.phi, x.a[s], psi, grad); }));
    for (std::size_t s = 0; s < s_count; ++s) terms[s] = jobs[s].get();
  } else {
    for (std::size_t s = 0; s < s_count; ++s) terms[s] = study_term(st.gram[s], st.n[s], x.phi, x.a[s], psi, grad);
  }
  Eval e;
  for (const auto& t : terms) e.value += t.ll;
  if (!grad || !std::isfinite(e.value)) return e;
  SufaParams g;
  g.phi = Matrix::Zero(x.phi.rows(), x.phi.cols());
  g.log_psi = Vector::Zero(psi.size());
  for (std::size_t s = 0; s < s_count; ++s) {
    g.phi += terms[s].gphi;
    g.a.push_back(terms[s].ga);
    g.log_psi += terms[s].gpsi.cwiseProduct(psi);
  }
  e.grad = g.pack();
  return e;
}

class Target {
 public:
  Target(const Stats& st, const SufaParams& shape, const SufaOptions& o) : st_(st), shape_(shape), o_(o) {}

  void set_phi_variance(const Matrix& v) { phi_prec_ = v.cwiseInverse(); }

  // Loadings with a tight shrinkage prior get a matching small inverse mass,
  // which keeps the leapfrog stable as the DL scales move.
  Vector precondition(const Vector& base) const {
    Vector out = base;
    const Index n = phi_prec_.size();
    out.head(n) = (phi_prec_.reshaped().array() + base.head(n).array().inverse()).inverse();
    return out;
  }

  Eval operator()(const Vector& xv) const {
    SufaParams x = shape_;
    x.unpack(xv);
    Eval e = likelihood(st_, x, true, o_.threads);
    if (!std::isfinite(e.value) || !e.grad.allFinite()) return {std::numeric_limits<double>::quiet_NaN(), {}};
    SufaParams g = x;
    g.phi = -x.phi.cwiseProduct(phi_prec_);
    e.value -= 0.5 * x.phi.cwiseAbs2().cwiseProduct(phi_prec_).sum();
    for (std::size_t s = 0; s < x.a.size(); ++s) {
      g.a[s] = -x.a[s] / o_.sigma2_a;
      e.value -= 0.5 * x.a[s].squaredNorm() / o_.sigma2_a;
    }
    const Vector dev = x.log_psi.array() - o_.log_psi_mean;
    g.log_psi = -dev / o_.log_psi_var;
    e.value -= 0.5 * dev.squaredNorm() / o_.log_psi_var;
    e.grad += g.pack();
    return e;
  }

 private:
  const Stats& st_;
  SufaParams shape_;
  const SufaOptions& o_;
  Matrix phi_prec_;
};

struct Step {
  Vector x;
  Eval at;
  double accept = 0.0;
  bool finite = true;
};

// One HMC transition with diagonal inverse mass `minv`.
Step hmc_step(const Target& target, const Vector& x0, const Eval& e0, const Vector& minv, double eps, int steps,
              Rng& rng) {
  const Index d = x0.size();
  Vector r(d);
  for (Index i = 0; i < d; ++i) r(i) = rng.normal() / std::sqrt(minv(i));
  const double h0 = -e0.value + 0.5 * r.cwiseAbs2().cwiseProduct(minv).sum();
  Vector x = x0;
  Eval e = e0;
  r += 0.5 * eps * e.grad;
  for (int i = 0; i < steps; ++i) {
    x += eps * minv.cwiseProduct(r);
    e = target(x);
    if (!std::isfinite(e.value)) return {x0, e0, 0.0, false};
    if (i + 1 < steps) r += eps * e.grad;
  }
  r += 0.5 * eps * e.grad;
  const double h1 = -e.value + 0.5 * r.cwiseAbs2().cwiseProduct(minv).sum();
  const double accept = std::isfinite(h1) ? std::min(1.0, std::exp(h0 - h1)) : 0.0;
  if (rng.uniform() < accept) return {x, e, accept, true};
  return {x0, e0, accept, true};
}

double initial_step_size(const Target& target, const Vector& x, const Eval& e, const Vector& minv, Rng& rng) {
  double eps = 0.1;
  auto accept_of = [&](double h) {
    Rng probe(rng.engine()());
    return hmc_step(target, x, e, minv, h, 1, probe).accept;
  };
  const double a0 = accept_of(eps);
  const double dir = a0 > 0.5 ? 1.0 : -1.0;
  for (int i = 0; i < 60; ++i) {
    const double a = accept_of(eps * std::pow(2.0, dir));
    if ((dir > 0.0 && a <= 0.5) || (dir < 0.0 && a > 0.5)) break;
    eps *= std::pow(2.0, dir);
  }
  return eps;
}

// Hoffman and Gelman dual averaging of log step size.
struct DualAverage {
  double mu = 0.0, hbar = 0.0, log_eps_bar = 0.0;
  long m = 0;
  double target = 0.8;

  void reset(double eps) {
    mu = std::log(10.0 * eps);
    hbar = 0.0;
    log_eps_bar = std::log(eps);
    m = 0;
  }
  double update(double accept) {
    constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;
    ++m;
    const double md = static_cast<double>(m);
    hbar = (1.0 - 1.0 / (md + kT0)) * hbar + (target - accept) / (md + kT0);
    const double log_eps = mu - std::sqrt(md) / kGamma * hbar;
    const double w = std::pow(md, -kKappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
    return std::exp(log_eps);
  }
};

void check_j(Index k, const std::vector<Index>& j, Index studies) {
  if (static_cast<Index>(j.size()) != studies) throw DimensionError("sufa: need one J_s per study");
  Index total = 0;
  for (Index v : j) {
    if (v < 0) throw DimensionError("sufa: J_s must be non-negative");
    total += v;
  }
  if (total > k) throw DimensionError("sufa: sum of J_s (" + std::to_string(total) + ") exceeds K = " + std::to_string(k));
}

std::vector<std::size_t> window_indices(Index draws, double window) {
  if (draws == 0) throw DimensionError("sufa: no posterior draws");
  if (!(window > 0.0 && window <= 1.0)) throw ConfigError("sufa: window must lie in (0, 1]");
  const auto keep = std::max<Index>(1, static_cast<Index>(std::ceil(window * static_cast<double>(draws))));
  std::vector<std::size_t> idx;
  for (Index t = draws - keep; t < draws; ++t) idx.push_back(static_cast<std::size_t>(t));
  return idx;
}

}  // namespace

Index sufa_select_kmax(const MultiStudyDataset& ds, Index qmax, double target) {
  ds.validate();
  const Index p = ds.num_vars();
  if (qmax < 1 || qmax > p) throw DimensionError("sufa: qmax must lie in [1, P]");
  if (!(target > 0.0 && target <= 1.0)) throw ConfigError("sufa: variance target must lie in (0, 1]");
  Index n = 0;
  for (const auto& y : ds.studies) n += y.rows();
  Matrix pooled(n, p);
  Index row = 0;
  for (const auto& y : ds.studies) {
    pooled.middleRows(row, y.rows()) = y.rowwise() - y.colwise().mean();
    row += y.rows();
  }
  const Vector sv = Eigen::BDCSVD<Matrix>(pooled).singularValues();
  const Vector ev = sv.cwiseAbs2();
  const double total = ev.sum();
  if (!(total > 0.0)) return 1;
  double acc = 0.0;
  for (Index i = 0; i < ev.size() && i < qmax; ++i) {
    acc += ev(i);
    if (acc >= target * total * (1.0 - 1e-12)) return i + 1;
  }
  return qmax;
}

std::vector<Index> sufa_default_j(Index k, Index studies, bool spread_remainder) {
  if (studies < 1) throw DimensionError("sufa: need at least one study");
  std::vector<Index> j(static_cast<std::size_t>(studies), k / studies);
  if (spread_remainder)
    for (Index s = 0; s < k % studies; ++s) ++j[static_cast<std::size_t>(s)];
  return j;
}

double sufa_log_likelihood(const MultiStudyDataset& ds, const SufaParams& x) {
  return likelihood(make_stats(ds), x, false, 1).value;
}

double sufa_log_likelihood_dense(const MultiStudyDataset& ds, const SufaParams& x) {
  const Vector psi = x.log_psi.array().exp();
  double ll = 0.0;
  for (std::size_t s = 0; s < ds.studies.size(); ++s) {
    const Matrix& y = ds.studies[s];
    const Matrix l = x.phi * x.a[s];
    Matrix sigma = x.phi * x.phi.transpose() + l * l.transpose();
    sigma.diagonal() += psi;
    const Eigen::LLT<Matrix> llt(sigma);
    const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    const double quad = y.transpose().cwiseProduct(llt.solve(y.transpose())).sum();
    const auto n = static_cast<double>(y.rows()), p = static_cast<double>(y.cols());
    ll += -0.5 * (n * p * std::log(2.0 * std::numbers::pi) + n * logdet + quad);
  }
  return ll;
}

SufaParams sufa_log_likelihood_gradient(const MultiStudyDataset& ds, const SufaParams& x) {
  const Eval e = likelihood(make_stats(ds), x, true, 1);
  if (!std::isfinite(e.value)) throw NumericError("sufa: likelihood is not finite at this point");
  SufaParams g = x;
  g.unpack(e.grad);
  return g;
}

SufaFit fit_sufa(const MultiStudyDataset& ds, Index k, const std::vector<Index>& j_in, const McmcControl& ctrl,
                 const SufaOptions& opts, const ProgressFn& progress) {
  ds.validate();
  ctrl.validate();
  opts.validate();
  const Index p = ds.num_vars(), s_count = ds.num_studies();
  if (k < 1 || k > p) throw DimensionError("sufa: K must lie in [1, P]");
  const std::vector<Index> j = j_in.empty() ? sufa_default_j(k, s_count, opts.spread_remainder) : j_in;
  check_j(k, j, s_count);

  SufaFit fit;
  fit.j_alloc = j;
  if (!is_centered(ds, 1e-6)) fit.warnings.push_back("data are not centered; the model assumes zero-mean studies");
  const Stats st = make_stats(ds);
  Rng rng(ctrl.seed);

  // Spectral start from the pooled covariance.
  Matrix pooled = Matrix::Zero(p, p);
  double n_total = 0.0;
  for (std::size_t s = 0; s < st.gram.size(); ++s) {
    pooled += st.gram[s];
    n_total += st.n[s];
  }
  pooled /= n_total;
  SufaParams x;
  x.phi = spectral_loadings(pooled, k);
  const Vector resid = pooled.diagonal() - x.phi.cwiseAbs2().rowwise().sum();
  x.log_psi = resid.cwiseMax(0.1 * pooled.diagonal()).cwiseMax(1e-4).array().log();
  for (Index s = 0; s < s_count; ++s) x.a.push_back(0.1 * rng.normal_matrix(k, j[static_cast<std::size_t>(s)]));

  DlState dl = DlState::init(p, k, opts.a_dl);
  dl_gibbs_update(dl, x.phi, rng);
  Target target(st, x, opts);
  target.set_phi_variance(dl.variance());

  Vector xv = x.pack();
  Eval cur = target(xv);
  if (!std::isfinite(cur.value)) throw NumericError("sufa: log posterior is not finite at the starting point");
  Vector minv = Vector::Ones(xv.size());
  double eps =
      opts.hmc.step_size > 0.0 ? opts.hmc.step_size : initial_step_size(target, xv, cur, target.precondition(minv), rng);

  DualAverage da;
  da.target = opts.hmc.adapt_target;
  da.reset(eps);
  const long mass_from = ctrl.burn / 4, mass_to = (3 * ctrl.burn) / 4;
  const bool mass = opts.hmc.adapt && opts.hmc.adapt_mass && mass_to - mass_from >= 20;
  Vector w_mean = Vector::Zero(xv.size()), w_m2 = Vector::Zero(xv.size());
  long w_n = 0;
  double accept_sum = 0.0;
  long accept_n = 0;
  const auto reject_cap = static_cast<long>(opts.max_reject_share * static_cast<double>(ctrl.nrun));

  for (long it = 0; it < ctrl.nrun; ++it) {
    Step step = hmc_step(target, xv, cur, target.precondition(minv), eps, opts.hmc.steps, rng);
    if (!step.finite) {
      ++fit.rejections;
      if (fit.rejections > reject_cap)
        throw NumericError("sufa: " + std::to_string(fit.rejections) + " HMC trajectories hit non-finite states by iteration " +
                           std::to_string(it + 1));
    }
    xv = std::move(step.x);
    cur = std::move(step.at);

    if (it < ctrl.burn && opts.hmc.adapt) {
      eps = da.update(step.accept);
      if (mass && it >= mass_from && it < mass_to) {
        ++w_n;
        const Vector delta = xv - w_mean;
        w_mean += delta / static_cast<double>(w_n);
        w_m2 += delta.cwiseProduct(xv - w_mean);
      }
      if (mass && it + 1 == mass_to) {
        const double nn = static_cast<double>(w_n);
        const Vector var = w_m2 / (nn - 1.0);
        minv = (nn / (nn + 5.0)) * var.array() + 1e-3 * 5.0 / (nn + 5.0);
        cur = target(xv);
        eps = initial_step_size(target, xv, cur, target.precondition(minv), rng);
        da.reset(eps);
      }
      if (it + 1 == ctrl.burn) eps = std::exp(da.log_eps_bar);
    } else if (it >= ctrl.burn) {
      accept_sum += step.accept;
      ++accept_n;
    }

    x.unpack(xv);
    dl_gibbs_update(dl, x.phi, rng);
    target.set_phi_variance(dl.variance());
    cur = target(xv);
    if (!std::isfinite(cur.value)) throw NumericError("sufa: log posterior became non-finite at iteration " + std::to_string(it + 1));

    if (ctrl.saves(it)) {
      fit.phi_draws.push_back(x.phi);
      fit.a_draws.resize(static_cast<std::size_t>(s_count));
      for (Index s = 0; s < s_count; ++s) fit.a_draws[static_cast<std::size_t>(s)].push_back(x.a[static_cast<std::size_t>(s)]);
      fit.psi_draws.push_back(x.log_psi.array().exp());
      fit.dl_theta_draws.push_back(dl.theta_dl);
      fit.dl_omega_draws.push_back(dl.omega_dl);
    }
    if (progress) progress(it + 1, ctrl.nrun);
  }
  fit.step_size = eps;
  fit.accept_rate = accept_n > 0 ? accept_sum / static_cast<double>(accept_n) : 0.0;
  fit.iterations = ctrl.nrun;
  fit.seed = ctrl.seed;
  if (fit.rejections > 0)
    fit.warnings.push_back(std::to_string(fit.rejections) + " HMC trajectories were rejected for non-finite states");
  return fit;
}

Matrix sufa_shared_covariance(const SufaFit& fit, bool with_psi, double window) {
  const auto idx = window_indices(fit.num_draws(), window);
  const Index p = fit.phi_draws.front().rows();
  Matrix acc = Matrix::Zero(p, p);
  for (std::size_t t : idx) {
    acc += fit.phi_draws[t] * fit.phi_draws[t].transpose();
    if (with_psi) acc.diagonal() += fit.psi_draws[t];
  }
  return acc / static_cast<double>(idx.size());
}

FitResult sufa_point_estimates(const SufaFit& fit, double window) {
  const auto idx = window_indices(fit.num_draws(), window);
  const Index p = fit.phi_draws.front().rows(), s_count = fit.num_studies();
  FitResult res;
  res.method = "sufa";
  res.warnings = fit.warnings;
  res.provenance = {fit.iterations, fit.seed, "match_align"};

  MatrixList phis;
  VectorList psis;
  for (std::size_t t : idx) {
    phis.push_back(fit.phi_draws[t]);
    psis.push_back(fit.psi_draws[t]);
  }
  res.phi = mean_of(match_align(phis));
  res.k_hat = res.phi.cols();
  res.sigma_phi = sufa_shared_covariance(fit, true, window);
  const Vector psi = mean_of(psis);
  res.psi.assign(static_cast<std::size_t>(s_count), psi);
  res.psi_shared = true;
  for (Index s = 0; s < s_count; ++s) {
    const auto su = static_cast<std::size_t>(s);
    Matrix sigma = Matrix::Zero(p, p);
    MatrixList lam;
    for (std::size_t t : idx) {
      sigma += fit.sigma_marginal_draw(s, static_cast<Index>(t));
      lam.push_back(fit.phi_draws[t] * fit.a_draws[su][t]);
    }
    sigma = symmetrize(sigma / static_cast<double>(idx.size()));
    res.sigma_marginal.push_back(sigma);
    res.sigma_lambda.push_back(sigma - res.sigma_phi);
    res.lambda.push_back(fit.j_alloc[su] > 0 ? op_align(lam).mean : Matrix(p, 0));
    res.j_hat.push_back(fit.j_alloc[su]);
  }
  res.validate();
  return res;
}

}  // namespace bifa
