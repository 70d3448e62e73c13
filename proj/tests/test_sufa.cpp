#include "bifa/metrics.hpp"
#include "bifa/profile.hpp"
#include "bifa/scenarios.hpp"
#include "bifa/sufa.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace bifa;

namespace {

McmcControl quick(std::uint64_t seed, long nrun = 1000, long burn = 500) {
  McmcControl c;
  c.nrun = nrun;
  c.burn = burn;
  c.seed = seed;
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

SufaParams random_point(Index p, Index k, const std::vector<Index>& j, Rng& rng) {
  SufaParams x;
  x.phi = rng.normal_matrix(p, k);
  for (Index js : j) x.a.push_back(rng.normal_matrix(k, js));
  x.log_psi = 0.5 * rng.normal_vector(p);
  return x;
}

MultiStudyDataset small_data(Rng& rng) {
  return make_dataset({rng.normal_matrix(40, 7), 1.5 * rng.normal_matrix(30, 7), rng.normal_matrix(25, 7)});
}

SufaFit one_draw(const Matrix& phi, const MatrixList& a, const Vector& psi) {
  SufaFit fit;
  fit.phi_draws = {phi};
  for (const auto& m : a) {
    fit.a_draws.push_back({m});
    fit.j_alloc.push_back(m.cols());
  }
  fit.psi_draws = {psi};
  return fit;
}

}  // namespace

TEST(SufaPrior, LogNormalResidualConstants) {
  const double mean = std::exp(kSufaLogPsiMean + 0.5 * kSufaLogPsiVar);
  const double var = (std::exp(kSufaLogPsiVar) - 1.0) * std::exp(2.0 * kSufaLogPsiMean + kSufaLogPsiVar);
  EXPECT_NEAR(mean, 1.0, 1e-14);
  EXPECT_NEAR(var, 7.0, 1e-12);
}

TEST(SufaKmax, RankOneData) {
  Rng rng(1);
  const Matrix y = rng.normal_vector(50) * rng.normal_vector(6).transpose();
  EXPECT_EQ(sufa_select_kmax(make_dataset({y}), 6), 1);
}

TEST(SufaKmax, TwoSpikeSpectrum) {
  // Columns scaled so the centered Gram has eigenvalues proportional to 9 and 1.
  Rng rng(2);
  Matrix q = rng.normal_matrix(60, 2);
  q.rowwise() -= q.colwise().mean();
  const Eigen::HouseholderQR<Matrix> qr(q);
  Matrix u = qr.householderQ() * Matrix::Identity(60, 2);
  Matrix y = Matrix::Zero(60, 5);
  y.col(0) = 3.0 * u.col(0);
  y.col(3) = u.col(1);
  EXPECT_EQ(sufa_select_kmax(make_dataset({y}), 5), 2);
}

TEST(SufaKmax, WhiteNoiseMatchesEigenOracle) {
  Rng rng(3);
  auto ds = make_dataset({rng.normal_matrix(200, 10), rng.normal_matrix(150, 10)});
  Matrix pooled(350, 10);
  pooled.topRows(200) = ds.studies[0].rowwise() - ds.studies[0].colwise().mean();
  pooled.bottomRows(150) = ds.studies[1].rowwise() - ds.studies[1].colwise().mean();
  const Eigen::SelfAdjointEigenSolver<Matrix> es(pooled.transpose() * pooled);
  const Vector ev = es.eigenvalues().reverse();
  Index oracle = 0;
  for (double acc = 0.0; acc < 0.95 * ev.sum();) acc += ev(oracle++);
  for (Index qmax : {4, 8, 10}) EXPECT_EQ(sufa_select_kmax(ds, qmax), std::min(oracle, qmax));
  EXPECT_GE(oracle, 9);
}

TEST(SufaKmax, CapAboveDimensionIsRejected) {
  Rng rng(4);
  EXPECT_THROW(sufa_select_kmax(make_dataset({rng.normal_matrix(10, 3)}), 4), DimensionError);
}

TEST(SufaJ, DefaultAllocation) {
  EXPECT_EQ(sufa_default_j(4, 4), (std::vector<Index>{1, 1, 1, 1}));
  EXPECT_EQ(sufa_default_j(5, 2), (std::vector<Index>{2, 2}));
  EXPECT_EQ(sufa_default_j(5, 2, true), (std::vector<Index>{3, 2}));
  EXPECT_EQ(sufa_default_j(2, 3), (std::vector<Index>{0, 0, 0}));
}

TEST(SufaLikelihood, WoodburyMatchesDense) {
  Rng rng(5);
  auto ds = small_data(rng);
  for (int rep = 0; rep < 10; ++rep) {
    SufaParams x = random_point(7, 3, {1, 1, 0}, rng);
    const double fast = sufa_log_likelihood(ds, x), dense = sufa_log_likelihood_dense(ds, x);
    EXPECT_NEAR(fast, dense, 1e-10 * std::abs(dense));
  }
}

TEST(SufaLikelihood, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  auto ds = small_data(rng);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    SufaParams x = random_point(7, 3, {1, 2, 0}, rng);
    const Vector g = sufa_log_likelihood_gradient(ds, x).pack();
    const Vector x0 = x.pack();
    for (Index i = 0; i < x0.size(); ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x0(i)));
      Vector xp = x0, xm = x0;
      xp(i) += h;
      xm(i) -= h;
      SufaParams a = x, b = x;
      a.unpack(xp);
      b.unpack(xm);
      const double fd = (sufa_log_likelihood_dense(ds, a) - sufa_log_likelihood_dense(ds, b)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - g(i)) / std::max({std::abs(fd), std::abs(g(i)), 1e-2}));
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Sufa, SubspaceSizesMustFit) {
  Rng rng(7);
  auto ds = preprocess(small_data(rng), {});
  EXPECT_THROW(fit_sufa(ds, 2, {1, 1, 1}, quick(7, 10, 5)), DimensionError);
  EXPECT_THROW(fit_sufa(ds, 3, {1, -1, 1}, quick(7, 10, 5)), DimensionError);
  EXPECT_THROW(fit_sufa(ds, 3, {1, 1}, quick(7, 10, 5)), DimensionError);
  EXPECT_THROW(fit_sufa(ds, 8, {}, quick(7, 10, 5)), DimensionError);
}

TEST(Sufa, ReproducibleAndWellFormed) {
  Scenario sc = generate_scenario(ScenarioSpec::preset(3, 8));
  auto ds = preprocess(sc.data, {});
  SufaFit a = fit_sufa(ds, 4, {}, quick(8, 200, 100)), b = fit_sufa(ds, 4, {}, quick(8, 200, 100));
  ASSERT_EQ(a.num_draws(), 100);
  EXPECT_EQ(a.phi_draws.back(), b.phi_draws.back());
  EXPECT_EQ(a.a_draws[2].back(), b.a_draws[2].back());
  Index total = 0;
  for (Index j : a.j_alloc) total += j;
  EXPECT_LE(total, 4);
  for (const auto& v : a.psi_draws) EXPECT_TRUE((v.array() > 0.0).all());
  for (std::size_t s = 0; s < a.a_draws.size(); ++s)
    for (const auto& m : a.a_draws[s]) EXPECT_EQ(m.cols(), a.j_alloc[s]);
}

TEST(Sufa, ScenarioThreeRecovery) {
  std::vector<double> rv_phi, rv_lambda;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Scenario sc = generate_scenario(ScenarioSpec::preset(3, seed));
    SufaFit fit = fit_sufa(preprocess(sc.data, {}), 4, {}, quick(seed));
    EXPECT_GE(fit.accept_rate, 0.6) << seed;
    EXPECT_LE(fit.accept_rate, 0.95) << seed;
    FitResult res = sufa_point_estimates(fit);
    rv_phi.push_back(rv_coefficient(res.sigma_phi, sc.truth.sigma_phi));
    double m = 0.0;
    for (Index s = 0; s < 4; ++s)
      m += rv_coefficient(res.sigma_lambda[static_cast<std::size_t>(s)], sc.truth.sigma_lambda[static_cast<std::size_t>(s)]);
    rv_lambda.push_back(m / 4.0);
  }
  EXPECT_GE(median(rv_phi), 0.85);
  EXPECT_GE(median(rv_lambda), 0.5);
}

TEST(Sufa, NoSubspaceSignalGivesSmallSpecificPart) {
  // The N(0, 1) prior on A_s does not shrink, so the posterior of Phi A_s A_s' Phi'
  // only collapses as the sample grows; at 100 rows per study it stays near
  // the sampling noise of the leading eigenvalues.
  ScenarioSpec spec = ScenarioSpec::preset(3, 9);
  spec.a_sd = 0.0;
  for (auto& n : spec.n) n = 10000;
  Scenario sc = generate_scenario(spec);
  FitResult res = sufa_point_estimates(fit_sufa(preprocess(sc.data, {}), 4, {}, quick(9)));
  for (const auto& l : res.sigma_lambda) EXPECT_LT(l.norm(), 0.1 * res.sigma_phi.norm());
}

TEST(Sufa, RuntimeGrowsWithDimension) {
  Rng rng(10);
  auto data = [&](Index p) {
    return make_dataset({rng.normal_matrix(60, p), rng.normal_matrix(60, p)});
  };
  auto small = preprocess(data(50), {}), large = preprocess(data(200), {});
  const double t_small = profile([&] { fit_sufa(small, 4, {}, quick(10, 30, 10)); }).seconds;
  const double t_large = profile([&] { fit_sufa(large, 4, {}, quick(10, 30, 10)); }).seconds;
  EXPECT_GT(t_large, t_small);
}

TEST(SufaPoint, SingleDrawIsItsOwnSummary) {
  Rng rng(11);
  const Matrix phi = rng.normal_matrix(5, 2);
  const MatrixList a = {rng.normal_matrix(2, 1), Matrix(2, 0)};
  const Vector psi = Vector::Constant(5, 0.4);
  SufaFit fit = one_draw(phi, a, psi);
  FitResult res = sufa_point_estimates(fit);
  Matrix shared = phi * phi.transpose();
  shared.diagonal() += psi;
  EXPECT_LT((res.sigma_phi - shared).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix l = phi * a[0];
  EXPECT_LT((res.sigma_lambda[0] - l * l.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(res.sigma_lambda[1].cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((res.psi[1] - psi).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((res.phi * res.phi.transpose() - phi * phi.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(res.j_hat, (std::vector<Index>{1, 0}));
  EXPECT_EQ(sufa_shared_covariance(fit, false), phi * phi.transpose());
}

TEST(SufaPoint, SignFlippedDrawsAlign) {
  Rng rng(12);
  const Matrix phi = rng.normal_matrix(6, 2);
  Matrix flipped = phi;
  flipped.col(1) *= -1.0;
  SufaFit fit;
  fit.phi_draws = {phi, flipped};
  fit.a_draws = {{Matrix(2, 0), Matrix(2, 0)}};
  fit.j_alloc = {0};
  fit.psi_draws = {Vector::Ones(6), Vector::Ones(6)};
  FitResult res = sufa_point_estimates(fit, 1.0);
  const MatrixList aligned = match_align(fit.phi_draws);
  EXPECT_LT((aligned[0] - aligned[1]).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((res.phi - aligned[0]).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SufaPoint, EmptyChainIsAnError) {
  SufaFit fit;
  EXPECT_THROW(sufa_point_estimates(fit), DimensionError);
}
