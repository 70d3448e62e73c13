#include "bifa/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace bifa {

void ScenarioSpec::validate() const {
  if (id < 1 || id > 5) throw ConfigError("scenario id must be 1-5");
  if (n.empty()) throw ConfigError("scenario needs at least one study");
  for (Index x : n)
    if (x < 2) throw ConfigError("every study needs at least two rows");
  if (p < 1 || k < 1 || j < 0 || n_partial < 0 || q_cov < 0) throw ConfigError("scenario dimensions must be positive");
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("sparsity must lie in [0, 1)");
  if (!(load_lo > 0.0 && load_lo <= load_hi)) throw ConfigError("loading range must satisfy 0 < lo <= hi");
  if (n_partial > 0 && num_studies() < 3) throw ConfigError("partially shared factors need at least three studies");
  if (alpha_q < 0.0 || beta_sd < 0.0 || a_sd < 0.0) throw ConfigError("scale parameters must be non-negative");
}

ScenarioSpec ScenarioSpec::preset(int id, std::uint64_t seed, bool mini) {
  ScenarioSpec s;
  s.id = id;
  s.seed = seed;
  switch (id) {
    case 1:
      s.n = {100, 100, 100, 100};
      break;
    case 2:
      s.n = {100, 100, 100, 100};
      s.q_cov = 2;
      break;
    case 3:
      s.n = {100, 100, 100, 100};
      s.j = 1;
      break;
    case 4:
      s.n = {1362, 217, 417, 1012, 2241, 205, 2403, 3775, 1790, 761, 373, 465};
      s.p = 42;
      s.j = 1;
      s.n_partial = 7;
      s.q_cov = 12;
      if (mini)
        for (auto& x : s.n) x = (x + 9) / 10;
      break;
    case 5:
      s.n = {157, 195, 285, 117};
      s.p = mini ? 200 : 1060;
      s.k = 15;
      s.j = 2;
      s.n_partial = 3;
      s.sparsity = 0.8;
      break;
    default:
      throw ConfigError("scenario id must be 1-5, got " + std::to_string(id));
  }
  return s;
}

Matrix sparse_signed_loadings(Index p, Index k, double sparsity, double lo, double hi, Rng& rng) {
  const Index total = p * k;
  const auto zeros = static_cast<Index>(std::llround(sparsity * static_cast<double>(total)));
  std::vector<Index> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  Matrix out(p, k);
  for (Index c = 0; c < k; ++c)
    for (Index r = 0; r < p; ++r) {
      const double mag = lo + (hi - lo) * rng.uniform();
      out(r, c) = rng.bernoulli(0.5) ? -mag : mag;
    }
  for (Index z = 0; z < zeros; ++z) {
    const Index e = idx[static_cast<std::size_t>(z)];
    out(e % p, e / p) = 0.0;
  }
  return out;
}

namespace {

Vector uniform_vector(Index n, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.uniform();
  return v;
}

Matrix noise(Index rows, const Vector& psi, Rng& rng) {
  Matrix e = rng.normal_matrix(rows, psi.size());
  return e * psi.cwiseSqrt().asDiagonal();
}

// Sharing matrix with K common columns, J specific columns per study and
// `partial` columns each used by a random subset of 2..S-1 studies.
IntMatrix sharing_matrix(Index s_count, Index k, Index j, Index partial, Rng& rng) {
  const Index total = k + s_count * j + partial;
  IntMatrix t = IntMatrix::Zero(s_count, total);
  t.leftCols(k).setOnes();
  Index c = k;
  for (Index s = 0; s < s_count; ++s)
    for (Index r = 0; r < j; ++r) t(s, c++) = 1;
  std::vector<Index> order(static_cast<std::size_t>(s_count));
  for (Index r = 0; r < partial; ++r, ++c) {
    const Index size = 2 + static_cast<Index>(rng.index(static_cast<std::size_t>(s_count - 2)));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (Index m = 0; m < size; ++m) t(order[static_cast<std::size_t>(m)], c) = 1;
  }
  return t;
}

}  // namespace

Scenario generate_scenario(const ScenarioSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Index s_count = spec.num_studies();
  const Index p = spec.p;
  Scenario out;
  GroundTruth& g = out.truth;
  MatrixList studies, covs;

  switch (spec.id) {
    case 1: {
      g.phi = sparse_signed_loadings(p, spec.k, spec.sparsity, spec.load_lo, spec.load_hi, rng);
      const Vector psi = uniform_vector(p, rng);
      g.sigma_phi = g.phi * g.phi.transpose() + Matrix(psi.asDiagonal());
      for (Index s = 0; s < s_count; ++s) {
        Matrix q = Matrix::Identity(p, p);
        if (s > 0) q += spec.alpha_q * rng.normal_matrix(p, p);
        const Index ns = spec.n[static_cast<std::size_t>(s)];
        const Matrix y = rng.normal_matrix(ns, spec.k) * g.phi.transpose() + noise(ns, psi, rng);
        studies.push_back(y * q.transpose());
        g.sigma.push_back(q * g.sigma_phi * q.transpose());
        g.sigma_lambda.push_back(g.sigma.back() - g.sigma_phi);
        g.psi.push_back(psi);
        g.q.push_back(std::move(q));
      }
      break;
    }
    case 2: {
      g.phi = sparse_signed_loadings(p, spec.k, spec.sparsity, spec.load_lo, spec.load_hi, rng);
      g.sigma_phi = g.phi * g.phi.transpose();
      g.alpha = rng.normal_matrix(s_count, p);
      g.beta = spec.beta_sd * rng.normal_matrix(spec.q_cov, p);
      for (Index s = 0; s < s_count; ++s) {
        const Vector psi = uniform_vector(p, rng);
        const Index ns = spec.n[static_cast<std::size_t>(s)];
        const Matrix x = rng.normal_matrix(ns, spec.q_cov);
        Matrix y = rng.normal_matrix(ns, spec.k) * g.phi.transpose() + noise(ns, psi, rng) + x * g.beta;
        y.rowwise() += g.alpha.row(s);
        studies.push_back(std::move(y));
        covs.push_back(x);
        g.sigma.push_back(g.sigma_phi + Matrix(psi.asDiagonal()));
        g.psi.push_back(psi);
      }
      break;
    }
    case 3: {
      g.phi = sparse_signed_loadings(p, spec.k, spec.sparsity, spec.load_lo, spec.load_hi, rng);
      const Vector psi = uniform_vector(p, rng);
      g.sigma_phi = g.phi * g.phi.transpose() + Matrix(psi.asDiagonal());
      for (Index s = 0; s < s_count; ++s) {
        const Matrix a = spec.a_sd * rng.normal_matrix(spec.k, spec.j);
        const Matrix lam = g.phi * a;
        const Index ns = spec.n[static_cast<std::size_t>(s)];
        studies.push_back(rng.normal_matrix(ns, spec.k) * g.phi.transpose() +
                          rng.normal_matrix(ns, spec.j) * lam.transpose() + noise(ns, psi, rng));
        g.sigma_lambda.push_back(lam * lam.transpose());
        g.sigma.push_back(g.sigma_phi + g.sigma_lambda.back());
        g.lambda.push_back(lam);
        g.a.push_back(a);
        g.psi.push_back(psi);
      }
      break;
    }
    case 4:
    case 5: {
      g.sharing = sharing_matrix(s_count, spec.k, spec.j, spec.n_partial, rng);
      const Index kstar = g.sharing.cols();
      g.phi_star = sparse_signed_loadings(p, kstar, spec.sparsity, spec.load_lo, spec.load_hi, rng);
      g.phi = g.phi_star.leftCols(spec.k);
      g.sigma_phi = g.phi * g.phi.transpose();
      if (spec.q_cov > 0) g.beta = spec.beta_sd * rng.normal_matrix(spec.q_cov, p);
      for (Index s = 0; s < s_count; ++s) {
        std::vector<Index> own;
        for (Index c = spec.k; c < kstar; ++c)
          if (g.sharing(s, c)) own.push_back(c);
        Matrix lam(p, static_cast<Index>(own.size()));
        for (std::size_t c = 0; c < own.size(); ++c) lam.col(static_cast<Index>(c)) = g.phi_star.col(own[c]);
        const Vector psi = uniform_vector(p, rng);
        const Index ns = spec.n[static_cast<std::size_t>(s)];
        Matrix y = rng.normal_matrix(ns, spec.k) * g.phi.transpose() + noise(ns, psi, rng);
        if (lam.cols() > 0) y += rng.normal_matrix(ns, lam.cols()) * lam.transpose();
        if (spec.q_cov > 0) {
          const Matrix x = rng.normal_matrix(ns, spec.q_cov);
          y += x * g.beta;
          covs.push_back(x);
        }
        studies.push_back(std::move(y));
        g.sigma_lambda.push_back(lam * lam.transpose());
        g.sigma.push_back(g.sigma_phi + g.sigma_lambda.back() + Matrix(psi.asDiagonal()));
        g.lambda.push_back(std::move(lam));
        g.psi.push_back(psi);
      }
      break;
    }
  }
  out.data = make_dataset(std::move(studies), std::move(covs));
  return out;
}

Split train_test_split(const MultiStudyDataset& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  Rng rng(seed);
  MatrixList tr, te, trc, tec;
  for (Index s = 0; s < ds.num_studies(); ++s) {
    const Matrix& y = ds.studies[static_cast<std::size_t>(s)];
    const Index n = y.rows();
    const Index ntr = std::clamp<Index>(static_cast<Index>(std::llround(train_frac * static_cast<double>(n))), 1, n - 1);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    auto take = [&](const Matrix& m, Index from, Index count) {
      Matrix out(count, m.cols());
      for (Index i = 0; i < count; ++i) out.row(i) = m.row(idx[static_cast<std::size_t>(from + i)]);
      return out;
    };
    tr.push_back(take(y, 0, ntr));
    te.push_back(take(y, ntr, n - ntr));
    if (ds.has_covariates()) {
      trc.push_back(take(ds.covariates[static_cast<std::size_t>(s)], 0, ntr));
      tec.push_back(take(ds.covariates[static_cast<std::size_t>(s)], ntr, n - ntr));
    }
  }
  Split out{make_dataset(std::move(tr), std::move(trc)), make_dataset(std::move(te), std::move(tec))};
  out.train.variable_names = out.test.variable_names = ds.variable_names;
  out.train.study_names = out.test.study_names = ds.study_names;
  return out;
}

}  // namespace bifa
