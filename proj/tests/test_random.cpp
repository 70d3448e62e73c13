#include "bifa/random.hpp"

#include <boost/math/special_functions/bessel.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace bifa;

namespace {

struct Moments {
  double mean;
  double var;
};

template <class F>
Moments sample_moments(int n, F draw) {
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = draw();
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  return {m, s2 / n - m * m};
}

}  // namespace

TEST(Rng, UniformStaysInOpenInterval) {
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, GammaMomentsAcrossShapes) {
  Rng rng(2);
  const int n = 200000;
  for (double shape : {0.0005, 0.3, 1.0, 2.0, 50.0}) {
    const double rate = 2.5;
    auto m = sample_moments(n, [&] { return rng.gamma(shape, rate); });
    const double mean = shape / rate;
    const double var = shape / (rate * rate);
    EXPECT_NEAR(m.mean, mean, 4.0 * std::sqrt(var / n)) << "shape " << shape;
    if (shape >= 0.3) EXPECT_NEAR(m.var / var, 1.0, 0.05) << "shape " << shape;
  }
}

TEST(Rng, GammaRejectsInvalidParameters) {
  Rng rng(3);
  EXPECT_THROW(rng.gamma(0.0, 1.0), NumericError);
  EXPECT_THROW(rng.gamma(1.0, -1.0), NumericError);
  EXPECT_THROW(rng.gamma(std::nan(""), 1.0), NumericError);
}

TEST(Rng, GigMeanMatchesBesselRatio) {
  Rng rng(4);
  const int n = 200000;
  struct Case {
    double lambda, chi, psi;
  };
  // One case per sampler regime plus the reciprocal branch.
  for (Case c : {Case{0.5, 0.01, 0.01}, Case{0.0, 0.02, 0.02}, Case{1.5, 1.0, 1.0}, Case{-3.5, 2.0, 1.0},
                 Case{-0.3, 0.5, 0.1}, Case{4.0, 3.0, 5.0}}) {
    const double omega = std::sqrt(c.chi * c.psi);
    const double eta = std::sqrt(c.chi / c.psi);
    const double k0 = boost::math::cyl_bessel_k(c.lambda, omega);
    const double k1 = boost::math::cyl_bessel_k(c.lambda + 1.0, omega);
    const double k2 = boost::math::cyl_bessel_k(c.lambda + 2.0, omega);
    const double mean = eta * k1 / k0;
    const double var = eta * eta * (k2 / k0 - (k1 / k0) * (k1 / k0));
    auto m = sample_moments(n, [&] { return rng.gig(c.lambda, c.chi, c.psi); });
    EXPECT_NEAR(m.mean, mean, 4.0 * std::sqrt(var / n)) << c.lambda << " " << c.chi << " " << c.psi;
  }
}

TEST(Rng, GigDegenerateLimitsAreGammaAndInverseGamma) {
  Rng rng(5);
  const int n = 100000;
  auto g = sample_moments(n, [&] { return rng.gig(2.0, 0.0, 4.0); });
  EXPECT_NEAR(g.mean, 2.0 / 2.0, 4.0 * std::sqrt(2.0 / 4.0 / n));
  auto ig = sample_moments(n, [&] { return rng.gig(-3.0, 4.0, 0.0); });
  // 1/Gamma(3, rate 2): mean 2/(3-1) = 1, var 4/(4*1) = 1.
  EXPECT_NEAR(ig.mean, 1.0, 4.0 * std::sqrt(1.0 / n));
}

TEST(Rng, InverseGaussianMoments) {
  Rng rng(6);
  const int n = 200000;
  for (double mean : {0.01, 1.0, 40.0}) {
    const double shape = 1.0;
    auto m = sample_moments(n, [&] { return rng.inv_gaussian(mean, shape); });
    const double var = mean * mean * mean / shape;
    EXPECT_NEAR(m.mean, mean, 5.0 * std::sqrt(var / n)) << mean;
    EXPECT_GT(m.mean, 0.0);
  }
}

TEST(Rng, DirichletLiesOnSimplex) {
  Rng rng(7);
  Vector alpha = Vector::Constant(5, 0.5);
  for (int i = 0; i < 1000; ++i) {
    Vector d = rng.dirichlet(alpha);
    EXPECT_NEAR(d.sum(), 1.0, 1e-12);
    EXPECT_TRUE((d.array() >= 0.0).all());
  }
}

TEST(Rng, PoissonMean) {
  Rng rng(8);
  const int n = 100000;
  auto m = sample_moments(n, [&] { return static_cast<double>(rng.poisson(3.7)); });
  EXPECT_NEAR(m.mean, 3.7, 4.0 * std::sqrt(3.7 / n));
  EXPECT_EQ(rng.poisson(0.0), 0u);
}

TEST(Rng, SerializedStateResumesTheStream) {
  Rng a(9);
  for (int i = 0; i < 11; ++i) a.normal();  // leave a cached deviate behind
  const std::string state = a.serialize();
  std::vector<double> expect;
  for (int i = 0; i < 20; ++i) expect.push_back(i % 2 ? a.normal() : a.gamma(1.3, 2.0));
  Rng b(0);
  b.deserialize(state);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(expect[static_cast<std::size_t>(i)], i % 2 ? b.normal() : b.gamma(1.3, 2.0));
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}
