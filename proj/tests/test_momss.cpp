#include "bifa/metrics.hpp"
#include "bifa/momss.hpp"
#include "bifa/scenarios.hpp"

#include "mc_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace bifa;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

void expect_monotone(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) ASSERT_GE(trace[i], trace[i - 1] - 1e-8) << "iteration " << i;
}

}  // namespace

TEST(Momss, WhiteNoiseSelectsNothing) {
  const Index p = 20;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto ds = make_dataset({rng.normal_matrix(200, p), rng.normal_matrix(200, p)});
    MomssOptions o;
    o.seed = seed;
    MomssFit fit = fit_momss(ds, 1, o);
    expect_monotone(fit.trace);
    EXPECT_LT(fit.gamma_prob.maxCoeff(), 0.5) << seed;
    EXPECT_LT(fit.phi.norm(), 0.2 * std::sqrt(static_cast<double>(p))) << seed;
  }
}

TEST(Momss, ShiftedStudyGetsItsIntercept) {
  Rng rng(2);
  const double c = 3.0;
  Matrix y2 = rng.normal_matrix(150, 8);
  y2.array() += c;
  auto ds = make_dataset({rng.normal_matrix(150, 8), y2});
  MomssOptions o;
  o.force_init = MomssInit::kVarimax;
  MomssFit fit = fit_momss(ds, 1, o);
  const double se = 1.0 / std::sqrt(150.0);
  for (Index j = 0; j < 8; ++j) EXPECT_NEAR(fit.alpha(j, 1), c, 3.0 * se + 0.02);
}

TEST(Momss, ScenarioTwoLoadingsRecovered) {
  std::vector<double> rv;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Scenario sc = generate_scenario(ScenarioSpec::preset(2, seed));
    MomssOptions o;
    o.seed = seed;
    MomssFit fit = fit_momss(sc.data, 4, o);
    expect_monotone(fit.trace);
    rv.push_back(rv_coefficient(fit.phi, sc.truth.phi));
  }
  EXPECT_GE(median(rv), 0.9);
}

TEST(Momss, CenteredDataNeedsNoIntercept) {
  Scenario sc = generate_scenario(ScenarioSpec::preset(1, 3));
  auto ds = preprocess(sc.data, {});
  MomssOptions o;
  o.force_init = MomssInit::kVarimax;
  MomssFit fit = fit_momss(ds, 4, o);
  for (Index s = 0; s < 4; ++s) EXPECT_LT(fit.alpha.col(s).norm(), 1e-3 * std::sqrt(40.0));
}

TEST(Momss, SelectedLoadingsAreAwayFromZero) {
  Scenario sc = generate_scenario(ScenarioSpec::preset(2, 4));
  MomssFit fit = fit_momss(sc.data, 4);
  const double floor = std::sqrt(NlpSpikeSlabConfig{}.tau0);
  for (Index i = 0; i < fit.phi.size(); ++i)
    if (fit.gamma_prob.data()[i] > 0.99) EXPECT_GT(std::abs(fit.phi.data()[i]), floor);
}

TEST(Momss, UncorrelatedCovariateBarelyMovesLoadings) {
  Scenario sc = generate_scenario(ScenarioSpec::preset(1, 5));
  auto ds = preprocess(sc.data, {});
  MomssOptions o;
  o.force_init = MomssInit::kVarimax;
  MomssFit base = fit_momss(ds, 4, o);
  Rng rng(55);
  MatrixList cov;
  for (const auto& y : ds.studies) cov.push_back(rng.normal_matrix(y.rows(), 1));
  MomssFit with = fit_momss(make_dataset(ds.studies, cov), 4, o);
  EXPECT_GE(rv_coefficient(base.phi, with.phi), 0.99);
  expect_monotone(with.trace);
}

TEST(Momss, TooManyFactorsIsADimensionError) {
  Rng rng(6);
  auto ds = make_dataset({rng.normal_matrix(5, 10)});
  EXPECT_THROW(fit_momss(ds, 5), DimensionError);
  EXPECT_THROW(fit_momss(make_dataset({rng.normal_matrix(30, 3)}), 4), DimensionError);
}

TEST(Momss, TraceIsTheLogPosterior) {
  Scenario sc = generate_scenario(ScenarioSpec::preset(2, 7));
  MomssOptions o;
  o.force_init = MomssInit::kPlain;
  MomssFit fit = fit_momss(sc.data, 3, o);
  EXPECT_NEAR(momss_log_posterior(sc.data, fit, o), fit.trace.back(), 1e-9 * std::abs(fit.trace.back()));
  EXPECT_TRUE((fit.gamma_prob.array() >= 0.0).all() && (fit.gamma_prob.array() <= 1.0).all());
  for (const auto& v : fit.psi) EXPECT_TRUE((v.array() > 0.0).all());
}

TEST(MomssInit, FoldsPartitionRows) {
  Scenario sc = generate_scenario(ScenarioSpec::preset(1, 8));
  auto a = momss_fold_labels(sc.data, 10, 3), b = momss_fold_labels(sc.data, 10, 3);
  EXPECT_EQ(a, b);
  for (const auto& lab : a) {
    std::vector<int> count(10, 0);
    for (int f : lab) ++count[static_cast<std::size_t>(f)];
    for (int c : count) EXPECT_EQ(c, 10);
  }
}

TEST(MomssInit, RankOneDataBothStartsFindTheDirection) {
  Rng rng(9);
  const Vector phi = rng.normal_vector(10);
  const Matrix y = rng.normal_vector(100) * phi.transpose() + 1e-3 * rng.normal_matrix(100, 10);
  MomssInitBundle b = momss_select_init(make_dataset({y}), 1);
  for (const Matrix* m : {&b.phi_plain, &b.phi_varimax}) {
    const double cosine = std::abs(m->col(0).dot(phi)) / (m->col(0).norm() * phi.norm());
    EXPECT_GT(cosine, 0.99);
  }
}

TEST(MomssInit, RotationOnlyDifferenceTiesTowardVarimax) {
  // With one factor varimax is the identity up to sign, so both starts are
  // the same model and the scores tie.
  Rng rng(10);
  const Matrix y = rng.normal_vector(80) * rng.normal_vector(6).transpose() + 0.3 * rng.normal_matrix(80, 6);
  MomssInitBundle b = momss_select_init(make_dataset({y, y}), 1);
  EXPECT_NEAR(b.score_plain, b.score_varimax, 1e-8 * std::abs(b.score_plain));
  EXPECT_EQ(b.choice, MomssInit::kVarimax);
}

TEST(MomssEffectiveK, Extremes) {
  MomssFit fit;
  fit.gamma_prob = Matrix::Zero(5, 3);
  EXPECT_EQ(momss_effective_k(fit), 0);
  fit.gamma_prob.setOnes();
  EXPECT_EQ(momss_effective_k(fit), 3);
}

TEST(MomssEffectiveK, ColumnsOrderedByIncludedCount) {
  MomssFit fit;
  fit.phi = Matrix::Identity(4, 3);
  fit.phi(1, 2) = 2.0;
  fit.gamma_prob = Matrix::Zero(4, 3);
  fit.gamma_prob(0, 0) = 1.0;
  fit.gamma_prob.col(2).setOnes();
  fit.psi = {Vector::Ones(4)};
  FitResult r = momss_point_estimates(fit);
  ASSERT_EQ(r.k_hat, 2);
  EXPECT_EQ(r.phi.col(0), fit.phi.col(2));
  EXPECT_EQ(r.phi.col(1), fit.phi.col(0));
}
