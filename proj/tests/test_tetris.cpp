#include "bifa/metrics.hpp"
#include "bifa/scenarios.hpp"
#include "bifa/tetris.hpp"

#include "mc_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace bifa;

namespace {

McmcControl quick(std::uint64_t seed, long nrun = 1000, long burn = 500) {
  McmcControl c;
  c.nrun = nrun;
  c.burn = burn;
  c.seed = seed;
  return c;
}

IntMatrix ints(Index rows, Index cols, std::initializer_list<int> v) {
  IntMatrix m(rows, cols);
  auto it = v.begin();
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = *it++;
  return m;
}

double dense_loglik(const Matrix& y, const Matrix& loadings, const Vector& psi) {
  Matrix sigma = loadings * loadings.transpose();
  sigma.diagonal() += psi;
  const Eigen::LLT<Matrix> llt(sigma);
  const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  const double quad = y.transpose().cwiseProduct(llt.solve(y.transpose())).sum();
  const auto n = static_cast<double>(y.rows()), p = static_cast<double>(y.cols());
  return -0.5 * (n * p * std::log(2.0 * std::numbers::pi) + n * logdet + quad);
}

// Two studies, one common and one private factor each.
struct TinyInstance {
  MultiStudyDataset data;
  SharingMatrix truth;
};

TinyInstance tiny_instance(std::uint64_t seed) {
  const IntMatrix t = ints(2, 3, {1, 1, 0, 1, 0, 1});
  Rng rng(seed * 7919);
  Matrix phi(6, 3);
  for (Index i = 0; i < phi.size(); ++i) phi.data()[i] = (rng.bernoulli(0.5) ? -1.0 : 1.0) * (0.8 + 0.7 * rng.uniform());
  MatrixList ys;
  for (Index s = 0; s < 2; ++s) {
    Matrix f = rng.normal_matrix(300, 3);
    for (Index k = 0; k < 3; ++k)
      if (!t(s, k)) f.col(k).setZero();
    ys.push_back(f * phi.transpose() + std::sqrt(0.2) * rng.normal_matrix(300, 6));
  }
  return {preprocess(make_dataset(ys), {}), SharingMatrix(t)};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("bifa_" + name + "_" + std::to_string(::getpid()))).string();
}

}  // namespace

TEST(SharingMatrix, WorkedExampleCounts) {
  SharingMatrix t(ints(3, 4, {1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 0, 0}));
  EXPECT_EQ(t.num_common(), 1);
  EXPECT_EQ(t.num_specific(), (std::vector<Index>{2, 2, 0}));
  EXPECT_EQ(t.common(), (std::vector<bool>{true, false, false, false}));
}

TEST(SharingMatrix, AllOnesAndIdentityLike) {
  SharingMatrix ones(IntMatrix::Ones(3, 4));
  EXPECT_EQ(ones.num_common(), 4);
  EXPECT_EQ(ones.num_specific(), (std::vector<Index>{0, 0, 0}));
  SharingMatrix diag(ints(3, 4, {1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1, 0}));
  EXPECT_EQ(diag.num_common(), 0);
  EXPECT_EQ(diag.num_specific(), (std::vector<Index>{2, 1, 1}));
}

TEST(SharingMatrix, SelectorsSplitIntoCommonAndResidual) {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    IntMatrix m(4, 6);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(0.6) ? 1 : 0;
    for (Index k = 0; k < 6; ++k)
      if (m.col(k).sum() == 0) m(static_cast<Index>(rng.index(4)), k) = 1;
    SharingMatrix t(m);
    const auto c = t.common();
    for (Index s = 0; s < 4; ++s) {
      const auto sel = t.selector(s), res = t.residual(s);
      for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_EQ(sel[k], c[k] || res[k]);
        EXPECT_FALSE(c[k] && res[k]);
      }
    }
  }
}

TEST(SharingMatrix, RejectsNonBinaryAndEmptyColumns) {
  EXPECT_THROW(SharingMatrix(ints(2, 2, {1, 2, 0, 1})), DomainError);
  EXPECT_THROW(SharingMatrix(ints(2, 2, {1, 0, 1, 0})), DomainError);
}

TEST(SharingMatrix, CanonicalFormIgnoresColumnOrder) {
  Rng rng(2);
  SharingMatrix t(ints(3, 5, {1, 0, 1, 1, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 1}));
  std::vector<Index> perm = {0, 1, 2, 3, 4};
  for (int rep = 0; rep < 20; ++rep) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    IntMatrix m(3, 5);
    for (Index j = 0; j < 5; ++j) m.col(j) = t.matrix().col(perm[static_cast<std::size_t>(j)]);
    SharingMatrix q(m);
    EXPECT_EQ(q.canonical(), t.canonical());
    EXPECT_EQ(q.canonical().num_specific(), t.num_specific());
    EXPECT_EQ(sharing_hamming(q, t), 0);
  }
  EXPECT_EQ(t.canonical().matrix().col(0), Eigen::Vector3i(1, 1, 1));
  EXPECT_EQ(t.canonical().matrix().col(2), Eigen::Vector3i(1, 0, 0));
}

TEST(SharingMatrix, HammingPadsNarrowerMatrix) {
  SharingMatrix a(ints(2, 2, {1, 1, 1, 0}));
  SharingMatrix b(ints(2, 3, {1, 1, 0, 1, 0, 1}));
  EXPECT_EQ(sharing_hamming(a, b), 1);
  EXPECT_EQ(sharing_hamming(a, a), 0);
}

TEST(SharingMode, IdenticalDraws) {
  SharingMatrix a(ints(2, 2, {1, 1, 1, 0}));
  EXPECT_EQ(choose_sharing_mode({a, a, a}, 0), a.canonical());
}

TEST(SharingMode, MajorityAtRadiusZero) {
  SharingMatrix a(ints(2, 2, {1, 1, 1, 0})), b(ints(2, 2, {1, 0, 1, 1}));
  std::vector<SharingMatrix> draws(9, a);
  draws.insert(draws.begin() + 3, b);
  EXPECT_EQ(choose_sharing_mode(draws, 0), a.canonical());
  // Ties go to the earliest draw.
  EXPECT_EQ(choose_sharing_mode({b, a}, 0), b.canonical());
}

TEST(SharingMode, PlantedMatrixUnderFlipNoise) {
  Rng rng(3);
  const IntMatrix planted = ints(4, 6, {1, 1, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1});
  std::vector<SharingMatrix> draws;
  for (int d = 0; d < 300; ++d) {
    IntMatrix m = planted;
    for (Index i = 0; i < m.size(); ++i)
      if (rng.bernoulli(0.05)) m.data()[i] = 1 - m.data()[i];
    for (Index k = 0; k < m.cols(); ++k)
      if (m.col(k).sum() == 0) m.col(k) = planted.col(k);
    draws.emplace_back(m);
  }
  const auto radius = static_cast<Index>(0.1 * 4 * 6);
  EXPECT_EQ(choose_sharing_mode(draws, radius), SharingMatrix(planted).canonical());
}

TEST(TetrisLikelihood, CollapsedMatchesDense) {
  Rng rng(4);
  const Matrix y = rng.normal_matrix(25, 5);
  const Vector psi = (0.3 * rng.normal_vector(5)).array().exp();
  for (Index k : {0, 1, 3}) {
    const Matrix l = rng.normal_matrix(5, k);
    const double dense = dense_loglik(y, l, psi);
    EXPECT_NEAR(tetris_collapsed_loglik(y.transpose() * y, 25.0, psi, l), dense, 1e-10 * std::abs(dense));
  }
}

TEST(TetrisMh, EnumerableStatesMatchPosterior) {
  // S = 2, P = 2, K* = 2 with fixed loadings: each column is one of
  // (1,1), (1,0), (0,1), so there are nine states.
  Rng rng(5);
  Matrix l(2, 2);
  l << 0.5, 0.3, 0.2, -0.4;
  const MatrixList y = {rng.normal_matrix(20, 2) * 1.1, rng.normal_matrix(20, 2)};
  const VectorList psi = {Vector::Ones(2), Vector::Constant(2, 0.8)};
  TetrisFlipModel model;
  for (const auto& m : y) {
    model.gram.push_back(m.transpose() * m);
    model.n.push_back(20.0);
  }
  model.loadings = l;
  model.psi = psi;
  model.ibp = {1.0, 2.0};

  const std::vector<std::pair<int, int>> cols = {{1, 1}, {1, 0}, {0, 1}};
  auto state_of = [&](const IntMatrix& t) {
    int id = 0;
    for (Index k = 0; k < 2; ++k)
      for (int c = 0; c < 3; ++c)
        if (t(0, k) == cols[static_cast<std::size_t>(c)].first && t(1, k) == cols[static_cast<std::size_t>(c)].second)
          id = id * 3 + c;
    return id;
  };
  std::vector<double> logp(9);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      IntMatrix t(2, 2);
      t << cols[static_cast<std::size_t>(a)].first, cols[static_cast<std::size_t>(b)].first,
          cols[static_cast<std::size_t>(a)].second, cols[static_cast<std::size_t>(b)].second;
      double lp = (a == 0 ? 0.0 : std::log(model.ibp.beta_t)) + (b == 0 ? 0.0 : std::log(model.ibp.beta_t));
      for (Index s = 0; s < 2; ++s) {
        Matrix ls(2, 0);
        for (Index k = 0; k < 2; ++k)
          if (t(s, k)) {
            ls.conservativeResize(2, ls.cols() + 1);
            ls.rightCols(1) = l.col(k);
          }
        lp += dense_loglik(y[static_cast<std::size_t>(s)], ls, psi[static_cast<std::size_t>(s)]);
      }
      logp[static_cast<std::size_t>(state_of(t))] = lp;
    }
  const double top = *std::max_element(logp.begin(), logp.end());
  double z = 0.0;
  for (double v : logp) z += std::exp(v - top);

  IntMatrix t = IntMatrix::Ones(2, 2);
  const int sweeps = 100000;
  std::vector<std::vector<double>> hits(9, std::vector<double>(sweeps, 0.0));
  for (int i = 0; i < sweeps; ++i) {
    tetris_flip_sweep(model, t, rng);
    hits[static_cast<std::size_t>(state_of(t))][static_cast<std::size_t>(i)] = 1.0;
  }
  for (std::size_t st = 0; st < 9; ++st) {
    const double expect = std::exp(logp[st] - top) / z;
    EXPECT_NEAR(mc::mean(hits[st]), expect, 3.0 * mc::batch_se(hits[st]) + 1e-4) << "state " << st;
  }
}

TEST(Tetris, AllOnesSharingIsStackStructure) {
  Scenario sc = generate_scenario(ScenarioSpec::preset(1, 6));
  TetrisOptions o;
  o.fixed_t = SharingMatrix(IntMatrix::Ones(4, 4));
  TetrisFit fit = fit_tetris(preprocess(sc.data, {}), quick(6, 300, 150), o);
  EXPECT_TRUE(fit.t_draws.empty());
  ASSERT_EQ(fit.num_draws(), 150);
  FitResult res = tetris_decompose(fit);
  EXPECT_EQ(res.k_hat, 4);
  for (Index j : res.j_hat) EXPECT_EQ(j, 0);
  for (const auto& l : res.sigma_lambda) EXPECT_EQ(l.norm(), 0.0);
}

TEST(Tetris, DecompositionAddsUp) {
  TinyInstance inst = tiny_instance(7);
  TetrisOptions o;
  o.fixed_t = inst.truth;
  FitResult res = tetris_decompose(fit_tetris(inst.data, quick(7, 300, 150), o));
  for (std::size_t s = 0; s < 2; ++s) {
    Matrix sum = res.sigma_phi + res.sigma_lambda[s];
    sum.diagonal() += res.psi[s];
    EXPECT_LT((sum - res.sigma_marginal[s]).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_EQ(res.k_hat, 1);
  EXPECT_EQ(res.j_hat, (std::vector<Index>{1, 1}));
  EXPECT_EQ(res.lambda[0].cols(), 1);
}

TEST(Tetris, TinyInstancePatternRecovered) {
  // A smaller IBP mass than the default keeps noise-fitting columns out.
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TinyInstance inst = tiny_instance(seed);
    TetrisOptions o;
    o.ibp = IbpConfig{1.0, 1.0};
    TetrisFit fit = fit_tetris(inst.data, quick(seed), o);
    hits += fit.t_hat == inst.truth.canonical() ? 1 : 0;
  }
  EXPECT_GE(hits, 6);
}

TEST(Tetris, ScenarioTwoOverSelectsCommonFactors) {
  Scenario sc = generate_scenario(ScenarioSpec::preset(2, 1));
  TetrisFit fit = fit_tetris(preprocess(sc.data, {}), quick(1));
  FitResult res = tetris_decompose(fit);
  EXPECT_GE(res.k_hat, 4);
  EXPECT_GE(rv_coefficient(res.sigma_phi, sc.truth.sigma_phi), 0.85);
  for (const auto& t : fit.t_draws)
    for (Index k = 0; k < t.cols(); ++k) EXPECT_GT(t.matrix().col(k).sum(), 0);
}

TEST(Tetris, RunawayColumnsAreStopped) {
  TinyInstance inst = tiny_instance(8);
  TetrisOptions o;
  // Three real columns against a cap of one.
  o.k_init = 1;
  o.cap_factor = 0.5;
  EXPECT_THROW(fit_tetris(inst.data, quick(8, 50, 10), o), GuardError);
}

TEST(TetrisCheckpoint, ResumeMatchesUninterruptedRun) {
  TinyInstance inst = tiny_instance(9);
  const std::string path = temp_path("resume");
  TetrisOptions o;
  o.refit = quick(9, 20, 10);
  TetrisFit full = fit_tetris(inst.data, quick(9, 60, 20), o);

  TetrisOptions first = o;
  first.checkpoint_path = path;
  first.checkpoint_every = 30;
  fit_tetris(inst.data, quick(9, 30, 20), first);
  TetrisOptions second = first;
  second.resume = true;
  second.checkpoint_every = 0;
  TetrisFit resumed = fit_tetris(inst.data, quick(9, 60, 20), second);
  std::remove(path.c_str());

  EXPECT_EQ(resumed.k_trace, full.k_trace);
  ASSERT_EQ(resumed.t_draws.size(), full.t_draws.size());
  for (std::size_t i = 0; i < full.t_draws.size(); ++i) EXPECT_EQ(resumed.t_draws[i], full.t_draws[i]);
  EXPECT_EQ(resumed.t_hat, full.t_hat);
}

TEST(TetrisCheckpoint, BudgetStopWritesResumableState) {
  TinyInstance inst = tiny_instance(10);
  const std::string path = temp_path("budget");
  TetrisOptions o;
  o.checkpoint_path = path;
  o.time_budget_seconds = 1e-9;
  TetrisFit fit = fit_tetris(inst.data, quick(10, 50, 10), o);
  EXPECT_FALSE(fit.phase1_complete);
  EXPECT_FALSE(fit.warnings.empty());
  EXPECT_TRUE(std::filesystem::exists(path));
  o.time_budget_seconds = 0.0;
  o.resume = true;
  o.refit = quick(10, 20, 10);
  TetrisFit done = fit_tetris(inst.data, quick(10, 50, 10), o);
  EXPECT_TRUE(done.phase1_complete);
  EXPECT_EQ(done.t_draws.size(), 40u);
  std::remove(path.c_str());
}

TEST(TetrisCheckpoint, RejectsForeignFiles) {
  TinyInstance inst = tiny_instance(11);
  const std::string path = temp_path("bad");
  TetrisOptions o;
  o.checkpoint_path = path;
  o.resume = true;
  {
    std::ofstream(path) << "{not json";
  }
  EXPECT_THROW(fit_tetris(inst.data, quick(11, 10, 5), o), ParseError);
  {
    std::ofstream(path) << R"({"format": "bifa-tetris-checkpoint", "version": 99})";
  }
  EXPECT_THROW(fit_tetris(inst.data, quick(11, 10, 5), o), SchemaError);
  std::remove(path.c_str());
  EXPECT_THROW(fit_tetris(inst.data, quick(11, 10, 5), o), IoError);
}
