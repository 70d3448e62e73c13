#include "bifa/pfa.hpp"

#include "bifa/linalg.hpp"

#include <cmath>
#include <map>
#include <string>

namespace bifa {

namespace {

constexpr Index kMaxDefaultVars = 512;
constexpr double kMaxCondition = 1e12;

// Slice sampling (stepping out, then shrinkage) of
//   log g(t) = n log t - (t - mu)^2 / (2 s2),  t > 0,
// started from t0.
double slice_det_ratio(double t0, double n, double mu, double s2, Rng& rng) {
  auto logg = [&](double t) { return t > 0.0 ? n * std::log(t) - 0.5 * (t - mu) * (t - mu) / s2 : -INFINITY; };
  const double mode = 0.5 * (mu + std::sqrt(mu * mu + 4.0 * n * s2));
  const double w = 2.0 / std::sqrt(n / (mode * mode) + 1.0 / s2);
  const double level = logg(t0) + std::log(rng.uniform());
  double lo = t0 - w * rng.uniform(), hi = lo + w;
  for (int i = 0; i < 50 && logg(lo) > level; ++i) lo -= w;
  for (int i = 0; i < 50 && logg(hi) > level; ++i) hi += w;
  lo = std::max(lo, 0.0);
  for (int i = 0; i < 200; ++i) {
    const double t = lo + (hi - lo) * rng.uniform();
    if (logg(t) > level) return t;
    (t < t0 ? lo : hi) = t;
  }
  return t0;
}

// One Gibbs pass over the rows of Q. Row r solves
//   q_r' y_i = phi_r' f_i + e_ir  with prior q_r ~ N(e_r, alpha^2 I),
// a Gaussian with precision U diag(d / psi_r + 1 / alpha^2) U', times the
// Jacobian |det Q|^N. Since det Q is linear in q_r along c = column r of
// Q^{-1}, the scalar t = c' q_r (the ratio new det / old det) is drawn first
// and the rest of the row from the Gaussian given c' q_r = t.
void update_q(const SymEigen& gram, const Matrix& y, const Matrix& target, const Vector& psi, double alpha2,
              Matrix& q, Rng& rng) {
  const Index p = y.cols();
  Matrix q_inv = q.inverse();
  const auto n = static_cast<double>(y.rows());
  const Matrix& u = gram.vectors;
  const Vector d = gram.values.cwiseMax(0.0);
  const Matrix b = y.transpose() * target;  // column r: Y' t_r
  for (Index r = 0; r < p; ++r) {
    Vector br = b.col(r) / psi(r);
    br(r) += 1.0 / alpha2;
    const Vector w = (d / psi(r)).array() + 1.0 / alpha2;
    const Vector winv = w.cwiseInverse();
    const Vector mean = u * winv.cwiseProduct(u.transpose() * br);
    Vector draw = mean + u * (winv.cwiseSqrt().cwiseProduct(rng.normal_vector(p)));
    const Vector c = q_inv.col(r);
    const Vector vc = u * winv.cwiseProduct(u.transpose() * c);
    const double cvc = c.dot(vc);
    const double t = slice_det_ratio(1.0, n, c.dot(mean), cvc, rng);
    draw += vc * ((t - c.dot(draw)) / cvc);
    const Vector delta = draw - q.row(r).transpose();
    q.row(r) = draw.transpose();
    // Sherman-Morrison for the row change; the denominator is t.
    const Vector delta_inv = q_inv.transpose() * delta;
    q_inv -= c * delta_inv.transpose() / t;
  }
}

struct Modal {
  Index k = 0;
  std::vector<Index> idx;
};

Modal modal_draws(const PfaFit& fit) {
  if (fit.num_draws() == 0) throw DimensionError("pfa: no posterior draws");
  Modal m;
  m.k = pfa_modal_k(fit);
  for (Index t = 0; t < fit.num_draws(); ++t)
    if (fit.phi_draws[static_cast<std::size_t>(t)].cols() == m.k) m.idx.push_back(t);
  return m;
}

Matrix shared_covariance(const PfaFit& fit, std::size_t t) {
  const Matrix l = fit.phi_draws[t] * fit.v_draws[t].cwiseSqrt().asDiagonal();
  Matrix out = l * l.transpose();
  out.diagonal() += fit.psi_draws[t];
  return out;
}

Matrix checked_inverse(const Matrix& q, Index study, Index draw) {
  const Eigen::PartialPivLU<Matrix> lu(q);
  const Matrix inv = lu.inverse();
  const double resid = (q * inv - Matrix::Identity(q.rows(), q.cols())).norm();
  if (!inv.allFinite() || resid > 1e-8)
    throw NumericError("pfa: Q of study " + std::to_string(study + 1) + " is singular at draw " +
                       std::to_string(draw + 1));
  return inv;
}

}  // namespace

void pfa_update_perturbation(const Matrix& y, const Matrix& target, const Vector& psi, double alpha2, Matrix& q,
                             Rng& rng) {
  if (q.rows() != y.cols() || q.cols() != y.cols() || target.rows() != y.rows() || target.cols() != y.cols())
    throw DimensionError("pfa: perturbation update dimensions do not match");
  update_q(sym_eigen_desc(cross_product(y)), y, target, psi, alpha2, q, rng);
}

PfaFit fit_pfa(const MultiStudyDataset& ds, Index k, const McmcControl& ctrl, const PfaOptions& opts,
               const ProgressFn& progress) {
  ds.validate();
  ctrl.validate();
  if (k < 1) throw DimensionError("PFA needs K >= 1");
  const Index p = ds.num_vars();
  if (k > p) throw DimensionError("PFA: K exceeds the number of variables");
  if (p > kMaxDefaultVars && !opts.allow_large_p)
    throw GuardError("PFA refuses P = " + std::to_string(p) + " > " + std::to_string(kMaxDefaultVars) +
                     " without the large-P override");
  if (opts.alpha_q && !(*opts.alpha_q > 0.0)) throw ConfigError("fixed alpha_Q must be positive");
  if (!(opts.cutoff >= 0.0)) throw ConfigError("truncation cutoff must be non-negative");

  PfaFit fit;
  if (!is_centered(ds, 1e-6)) fit.warnings.push_back("data are not centered; the model assumes zero-mean studies");
  const Index s_count = ds.num_studies();
  std::vector<Index> all(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) all[static_cast<std::size_t>(j)] = j;
  FaKernel kernel(p, IntMatrix::Ones(s_count, k), {all}, true, opts.hyper, opts.psi_prior);

  std::vector<SymEigen> grams;
  for (const auto& y : ds.studies) grams.push_back(sym_eigen_desc(cross_product(y)));
  MatrixList q(static_cast<std::size_t>(s_count), Matrix::Identity(p, p));
  MatrixList z = ds.studies;
  double alpha2 = opts.alpha_q ? *opts.alpha_q * *opts.alpha_q : 0.01 * 0.01;
  if (s_count > 1) fit.q_draws.resize(static_cast<std::size_t>(s_count));

  Rng rng(ctrl.seed);
  kernel.initialize(z);
  const long prune_from = static_cast<long>(opts.truncation_start * static_cast<double>(ctrl.nrun));
  Index n_total = 0;
  for (const auto& y : ds.studies) n_total += y.rows();

  for (long it = 0; it < ctrl.nrun; ++it) {
    kernel.sweep(z, rng);
    if (!kernel.loadings.allFinite()) throw NumericError("pfa: non-finite loadings at iteration " + std::to_string(it + 1));

    // Factor variances.
    for (Index c = 0; c < kernel.num_cols(); ++c) {
      double ss = 0.0;
      for (const auto& f : kernel.factors) ss += f.col(c).squaredNorm();
      kernel.factor_var(c) = rng.inv_gamma(opts.a_nu + 0.5 * static_cast<double>(n_total), opts.b_nu + 0.5 * ss);
    }

    // Perturbations of the non-reference studies.
    double dev = 0.0;
    for (Index s = 1; s < s_count; ++s) {
      const auto su = static_cast<std::size_t>(s);
      const Matrix target = kernel.factors[su] * kernel.loadings.transpose();
      Matrix cand = q[su];
      update_q(grams[su], ds.studies[su], target, kernel.psi[su], alpha2, cand, rng);
      const double rc = lu_rcond(cand);
      if (cand.allFinite() && rc > 0.0 && 1.0 / rc <= kMaxCondition) {
        q[su] = std::move(cand);
      } else {
        ++fit.q_rejections;
        if (fit.q_rejections > ctrl.nrun / 10)
          throw NumericError("pfa: perturbation of study " + std::to_string(s + 1) + " is repeatedly ill-conditioned");
      }
      z[su] = ds.studies[su] * q[su].transpose();
      dev += (q[su] - Matrix::Identity(p, p)).squaredNorm();
    }
    if (s_count > 1 && !opts.alpha_q) {
      const double cells = static_cast<double>((s_count - 1) * p * p);
      alpha2 = rng.inv_gamma(opts.alpha_shape + 0.5 * cells, opts.alpha_scale + 0.5 * dev);
    }

    // Monotone truncation.
    if (it >= prune_from) {
      std::vector<Index> keep;
      for (Index c = 0; c < kernel.num_cols(); ++c)
        if (kernel.loadings.col(c).cwiseAbs().mean() >= opts.cutoff) keep.push_back(c);
      if (keep.empty()) throw NumericError("pfa: truncation removed every factor at iteration " + std::to_string(it + 1));
      if (static_cast<Index>(keep.size()) < kernel.num_cols()) kernel.keep_columns(keep);
    }
    fit.k_trace.push_back(kernel.num_cols());

    if (ctrl.saves(it)) {
      fit.phi_draws.push_back(kernel.loadings);
      fit.v_draws.push_back(kernel.factor_var);
      fit.psi_draws.push_back(kernel.psi.front());
      for (Index s = 0; s < static_cast<Index>(fit.q_draws.size()); ++s)
        fit.q_draws[static_cast<std::size_t>(s)].push_back(q[static_cast<std::size_t>(s)]);
      if (s_count > 1) fit.alpha_q_draws.push_back(std::sqrt(alpha2));
    }
    if (progress) progress(it + 1, ctrl.nrun);
  }
  fit.iterations = ctrl.nrun;
  fit.seed = ctrl.seed;
  if (fit.q_rejections > 0)
    fit.warnings.push_back(std::to_string(fit.q_rejections) + " ill-conditioned perturbation updates were rejected");
  return fit;
}

Index pfa_modal_k(const PfaFit& fit) {
  std::map<Index, long> counts;
  for (const auto& d : fit.phi_draws) ++counts[d.cols()];
  Index best = 0;
  long hits = -1;
  for (const auto& [kk, n] : counts)
    if (n > hits) {
      best = kk;
      hits = n;
    }
  return best;
}

PfaCovariances pfa_study_covariances(const PfaFit& fit) {
  const Modal m = modal_draws(fit);
  const Index p = fit.psi_draws.front().size();
  const Index s_count = fit.num_studies();
  PfaCovariances out;
  out.k = m.k;
  out.draws_used = static_cast<Index>(m.idx.size());
  out.sigma_phi = Matrix::Zero(p, p);
  out.sigma.assign(static_cast<std::size_t>(s_count), Matrix::Zero(p, p));
  for (Index t : m.idx) {
    const auto tu = static_cast<std::size_t>(t);
    const Matrix shared = shared_covariance(fit, tu);
    out.sigma_phi += shared;
    for (Index s = 0; s < s_count; ++s) {
      const auto su = static_cast<std::size_t>(s);
      if (s == 0 || fit.q_draws.empty()) {
        out.sigma[su] += shared;
        continue;
      }
      const Matrix inv = checked_inverse(fit.q_draws[su][tu], s, t);
      out.sigma[su] += inv * shared * inv.transpose();
    }
  }
  const double n = static_cast<double>(m.idx.size());
  out.sigma_phi /= n;
  for (auto& s : out.sigma) {
    s /= n;
    s = symmetrize(s);
    out.sigma_lambda.push_back(s - out.sigma_phi);
  }
  return out;
}

FitResult pfa_point_estimates(const PfaFit& fit) {
  const Modal m = modal_draws(fit);
  PfaCovariances cov = pfa_study_covariances(fit);
  FitResult res;
  res.method = "pfa";
  res.warnings = fit.warnings;
  res.provenance = {fit.iterations, fit.seed, "op"};
  MatrixList scaled;
  for (Index t : m.idx) {
    const auto tu = static_cast<std::size_t>(t);
    scaled.push_back(fit.phi_draws[tu] * fit.v_draws[tu].cwiseSqrt().asDiagonal());
  }
  const AlignResult a = op_align(scaled);
  res.phi = a.mean;
  res.k_hat = m.k;
  res.sigma_phi = cov.sigma_phi;
  res.sigma_marginal = cov.sigma;
  res.sigma_lambda = cov.sigma_lambda;
  VectorList kept;
  for (Index t : m.idx) kept.push_back(fit.psi_draws[static_cast<std::size_t>(t)]);
  res.psi.assign(static_cast<std::size_t>(fit.num_studies()), mean_of(kept));
  res.psi_shared = true;
  if (m.idx.size() < fit.phi_draws.size())
    res.warnings.push_back("kept " + std::to_string(m.idx.size()) + " of " + std::to_string(fit.phi_draws.size()) +
                           " draws with the modal factor count");
  res.validate();
  return res;
}

MatrixList pfa_experimental_specific_loadings(const PfaFit& fit) {
  const Modal m = modal_draws(fit);
  const Index p = fit.psi_draws.front().size();
  MatrixList out;
  for (Index s = 0; s < fit.num_studies(); ++s) {
    Matrix acc = Matrix::Zero(p, m.k);
    if (s > 0 && !fit.q_draws.empty())
      for (Index t : m.idx) {
        const auto tu = static_cast<std::size_t>(t);
        const Matrix inv = checked_inverse(fit.q_draws[static_cast<std::size_t>(s)][tu], s, t);
        acc += (inv - Matrix::Identity(p, p)) * fit.phi_draws[tu] * fit.v_draws[tu].cwiseSqrt().asDiagonal();
      }
    out.push_back(acc / static_cast<double>(m.idx.size()));
  }
  return out;
}

}  // namespace bifa
