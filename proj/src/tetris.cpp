#include "bifa/tetris.hpp"

#include "bifa/linalg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace bifa {

namespace {

constexpr int kCheckpointVersion = 1;

bool all_ones(const IntMatrix& t, Index k) { return t.col(k).minCoeff() == 1; }

std::vector<bool> column_flags(const IntMatrix& t, Index row, bool residual) {
  std::vector<bool> out(static_cast<std::size_t>(t.cols()));
  for (Index k = 0; k < t.cols(); ++k) {
    const bool on = row < 0 ? all_ones(t, k) : t(row, k) == 1;
    out[static_cast<std::size_t>(k)] = residual ? on && !all_ones(t, k) : on;
  }
  return out;
}

}  // namespace

SharingMatrix::SharingMatrix(IntMatrix t) : t_(std::move(t)) {
  if ((t_.array() != 0 && t_.array() != 1).any()) throw DomainError("sharing matrix must be binary");
  for (Index k = 0; k < t_.cols(); ++k)
    if (t_.col(k).sum() == 0) throw DomainError("sharing matrix column " + std::to_string(k + 1) + " is empty");
}

std::vector<bool> SharingMatrix::common() const { return column_flags(t_, -1, false); }
std::vector<bool> SharingMatrix::selector(Index s) const { return column_flags(t_, s, false); }
std::vector<bool> SharingMatrix::residual(Index s) const { return column_flags(t_, s, true); }

Index SharingMatrix::num_common() const {
  Index n = 0;
  for (Index k = 0; k < t_.cols(); ++k) n += all_ones(t_, k) ? 1 : 0;
  return n;
}

std::vector<Index> SharingMatrix::num_specific() const {
  const Index k = num_common();
  std::vector<Index> out;
  for (Index s = 0; s < t_.rows(); ++s) out.push_back(t_.row(s).sum() - k);
  return out;
}

SharingMatrix SharingMatrix::canonical() const {
  std::vector<Index> order(static_cast<std::size_t>(t_.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  auto key = [&](Index k) {
    std::vector<int> v(static_cast<std::size_t>(t_.rows()));
    for (Index s = 0; s < t_.rows(); ++s) v[static_cast<std::size_t>(s)] = t_(s, k);
    return v;
  };
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return key(a) > key(b); });
  IntMatrix out(t_.rows(), t_.cols());
  for (Index j = 0; j < t_.cols(); ++j) out.col(j) = t_.col(order[static_cast<std::size_t>(j)]);
  SharingMatrix m;
  m.t_ = std::move(out);
  return m;
}

namespace {

Index hamming_padded(const IntMatrix& x, const IntMatrix& y) {
  const Index w = std::max(x.cols(), y.cols());
  Index d = 0;
  for (Index k = 0; k < w; ++k)
    for (Index s = 0; s < x.rows(); ++s) {
      const int u = k < x.cols() ? x(s, k) : 0, v = k < y.cols() ? y(s, k) : 0;
      d += u != v ? 1 : 0;
    }
  return d;
}

}  // namespace

Index sharing_hamming(const SharingMatrix& a, const SharingMatrix& b) {
  if (a.studies() != b.studies()) throw DimensionError("sharing matrices have different study counts");
  return hamming_padded(a.canonical().matrix(), b.canonical().matrix());
}

SharingMatrix choose_sharing_mode(const std::vector<SharingMatrix>& draws, Index radius) {
  if (draws.empty()) throw DimensionError("mode of an empty draw list");
  std::vector<SharingMatrix> canon;
  for (const auto& d : draws) {
    if (d.studies() != draws.front().studies()) throw DimensionError("sharing matrices have different study counts");
    canon.push_back(d.canonical());
  }
  const std::size_t n = canon.size();
  std::vector<long> counts(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      if (hamming_padded(canon[i].matrix(), canon[j].matrix()) <= radius) {
        ++counts[i];
        if (j != i) ++counts[j];
      }
  const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
  return canon[static_cast<std::size_t>(best)];
}

double tetris_collapsed_loglik(const Matrix& gram, double n, const Vector& psi, const Matrix& loadings) {
  const Index p = psi.size(), m = loadings.cols();
  const Vector ipsi = psi.cwiseInverse();
  double ll = -0.5 * (n * static_cast<double>(p) * std::log(2.0 * std::numbers::pi) + n * psi.array().log().sum() +
                      (gram.diagonal().array() * ipsi.array()).sum());
  if (m == 0) return ll;
  const Matrix u = ipsi.asDiagonal() * loadings;
  Matrix g = Matrix::Identity(m, m);
  g.noalias() += loadings.transpose() * u;
  const Matrix h = u.transpose() * gram * u;
  const Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success) throw NumericError("tetris: collapsed covariance is not positive definite");
  const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return ll - 0.5 * (n * logdet - llt.solve(h).trace());
}

namespace {

// Study-level pieces that make subset likelihoods K* x K* operations.
struct StudyGram {
  Matrix g;  // L' Psi^-1 L
  Matrix h;  // L' Psi^-1 C Psi^-1 L
};

StudyGram study_gram(const Matrix& gram, const Vector& psi, const Matrix& loadings) {
  const Matrix u = psi.cwiseInverse().asDiagonal() * loadings;
  return {loadings.transpose() * u, u.transpose() * gram * u};
}

// Collapsed log-likelihood of the active columns, up to terms that do not
// depend on the active set.
double subset_loglik(const StudyGram& sg, double n, const std::vector<Index>& active) {
  const auto m = static_cast<Index>(active.size());
  if (m == 0) return 0.0;
  Matrix g(m, m), h(m, m);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j) {
      g(i, j) = sg.g(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(j)]);
      h(i, j) = sg.h(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(j)]);
    }
  g.diagonal().array() += 1.0;
  const Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (n * logdet - llt.solve(h).trace());
}

std::vector<Index> active_of(const IntMatrix& t, Index s) {
  std::vector<Index> a;
  for (Index k = 0; k < t.cols(); ++k)
    if (t(s, k)) a.push_back(k);
  return a;
}

int flip_sweep(const MatrixList& gram, const std::vector<double>& n, const Matrix& loadings, const VectorList& psi,
               const IbpConfig& ibp, IntMatrix& t, Rng& rng) {
  const Index s_count = t.rows();
  const double denom = ibp.beta_t + static_cast<double>(s_count) - 1.0;
  int accepted = 0;
  for (Index s = 0; s < s_count; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const StudyGram sg = study_gram(gram[su], psi[su], loadings);
    double cur = subset_loglik(sg, n[su], active_of(t, s));
    for (Index k = 0; k < t.cols(); ++k) {
      const double others = static_cast<double>(t.col(k).sum() - t(s, k));
      if (others <= 0.0) continue;
      const double p_on = others / denom;
      t(s, k) = 1 - t(s, k);
      const double prop = subset_loglik(sg, n[su], active_of(t, s));
      const double log_prior = t(s, k) ? std::log(p_on) - std::log1p(-p_on) : std::log1p(-p_on) - std::log(p_on);
      const double log_ratio = prop - cur + log_prior;
      if (std::log(rng.uniform()) < log_ratio) {
        cur = prop;
        ++accepted;
      } else {
        t(s, k) = 1 - t(s, k);
      }
    }
  }
  return accepted;
}

std::vector<Index> singletons_of(const IntMatrix& t, Index s) {
  std::vector<Index> out;
  for (Index k = 0; k < t.cols(); ++k)
    if (t(s, k) == 1 && t.col(k).sum() == 1) out.push_back(k);
  return out;
}

// Replace every column private to study s by Poisson(alpha beta / (beta + S - 1))
// fresh columns with loadings from the shrinkage prior. The proposal is the
// prior, so acceptance is the collapsed likelihood ratio of study s.
bool singleton_move(FaKernel& kernel, const MatrixList& gram, const std::vector<double>& n, const IbpConfig& ibp,
                    Index s, Rng& rng) {
  const auto su = static_cast<std::size_t>(s);
  const Index p = kernel.num_vars(), s_count = kernel.num_studies();
  const std::vector<Index> old = singletons_of(kernel.mask, s);
  const double rate = ibp.alpha_t * ibp.beta_t / (ibp.beta_t + static_cast<double>(s_count) - 1.0);
  const auto fresh = static_cast<Index>(rng.poisson(rate));
  if (old.empty() && fresh == 0) return false;

  std::vector<Index> keep;
  for (Index k = 0; k < kernel.num_cols(); ++k)
    if (std::find(old.begin(), old.end(), k) == old.end()) keep.push_back(k);

  const MgpsState& st = kernel.mgps.front();
  const MgpsHyper& hy = st.hyper();
  double theta = 1.0;
  for (Index k : keep) theta *= st.delta()(k);
  Matrix omega(p, fresh), add(p, fresh);
  Vector delta(fresh);
  for (Index j = 0; j < fresh; ++j) {
    delta(j) = rng.gamma(keep.empty() && j == 0 ? hy.a1 : hy.a2, 1.0);
    theta *= delta(j);
    for (Index i = 0; i < p; ++i) {
      omega(i, j) = rng.gamma(hy.kappa / 2.0, hy.kappa / 2.0);
      add(i, j) = rng.normal() / std::sqrt(omega(i, j) * theta);
    }
  }

  Matrix cur_l(p, 0), new_l(p, 0);
  std::vector<Index> active = active_of(kernel.mask, s);
  cur_l.resize(p, static_cast<Index>(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) cur_l.col(static_cast<Index>(j)) = kernel.loadings.col(active[j]);
  std::vector<Index> kept_active;
  for (Index k : active)
    if (std::find(old.begin(), old.end(), k) == old.end()) kept_active.push_back(k);
  new_l.resize(p, static_cast<Index>(kept_active.size()) + fresh);
  for (std::size_t j = 0; j < kept_active.size(); ++j) new_l.col(static_cast<Index>(j)) = kernel.loadings.col(kept_active[j]);
  new_l.rightCols(fresh) = add;

  const double ratio = tetris_collapsed_loglik(gram[su], n[su], kernel.psi[su], new_l) -
                       tetris_collapsed_loglik(gram[su], n[su], kernel.psi[su], cur_l);
  if (!(std::log(rng.uniform()) < ratio)) return false;

  kernel.keep_columns(keep);
  if (fresh > 0) {
    IntMatrix cols = IntMatrix::Zero(s_count, fresh);
    cols.row(s).setOnes();
    kernel.append_columns(cols, 0, rng);
    kernel.loadings.rightCols(fresh) = add;
    MgpsState& ms = kernel.mgps.front();
    Matrix om = ms.omega();
    Vector de = ms.delta();
    om.rightCols(fresh) = omega;
    de.tail(fresh) = delta;
    ms.set(om, de);
  }
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoints.

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

Matrix json_matrix(const nlohmann::json& j) {
  const Index r = j.at("rows").get<Index>(), c = j.at("cols").get<Index>();
  const auto d = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(d.size()) != r * c) throw ParseError("checkpoint: matrix size mismatch");
  return Eigen::Map<const Matrix>(d.data(), r, c);
}

nlohmann::json int_matrix_json(const IntMatrix& m) { return matrix_json(m.cast<double>()); }
IntMatrix json_int_matrix(const nlohmann::json& j) { return json_matrix(j).cast<int>(); }

void write_checkpoint(const std::string& path, long iteration, const FaKernel& kernel, const Rng& rng,
                      const TetrisFit& fit, std::uint64_t seed) {
  nlohmann::json j;
  j["format"] = "bifa-tetris-checkpoint";
  j["version"] = kCheckpointVersion;
  j["iteration"] = iteration;
  j["seed"] = seed;
  j["loadings"] = matrix_json(kernel.loadings);
  j["mask"] = int_matrix_json(kernel.mask);
  nlohmann::json psi = nlohmann::json::array();
  for (const auto& v : kernel.psi) psi.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  j["psi"] = psi;
  j["mgps_omega"] = matrix_json(kernel.mgps.front().omega());
  j["mgps_delta"] = matrix_json(kernel.mgps.front().delta());
  j["rng"] = rng.serialize();
  nlohmann::json draws = nlohmann::json::array();
  for (const auto& t : fit.t_draws) draws.push_back(int_matrix_json(t.matrix()));
  j["t_draws"] = draws;
  j["k_trace"] = fit.k_trace;
  j["births_accepted"] = fit.births_accepted;
  j["flips_accepted"] = fit.flips_accepted;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out << j.dump();
    if (!out) throw IoError("failed writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
}

long read_checkpoint(const std::string& path, FaKernel& kernel, Rng& rng, TetrisFit& fit, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "bifa-tetris-checkpoint") throw SchemaError("not a tetris checkpoint: " + path);
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw SchemaError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    if (j.at("seed").get<std::uint64_t>() != seed) throw ConfigError("checkpoint was written with a different seed");
    kernel.loadings = json_matrix(j.at("loadings"));
    kernel.mask = json_int_matrix(j.at("mask"));
    if (kernel.mask.rows() != static_cast<Index>(kernel.psi.size()))
      throw SchemaError("checkpoint study count does not match the data");
    const auto psi = j.at("psi").get<std::vector<std::vector<double>>>();
    if (psi.size() != kernel.psi.size()) throw SchemaError("checkpoint study count does not match the data");
    for (std::size_t s = 0; s < psi.size(); ++s) kernel.psi[s] = Eigen::Map<const Vector>(psi[s].data(), static_cast<Index>(psi[s].size()));
    if (kernel.loadings.rows() != kernel.psi.front().size()) throw SchemaError("checkpoint variable count does not match the data");
    const Index k = kernel.loadings.cols();
    kernel.factor_var = Vector::Ones(k);
    kernel.blocks = {std::vector<Index>(static_cast<std::size_t>(k))};
    std::iota(kernel.blocks.front().begin(), kernel.blocks.front().end(), Index{0});
    kernel.mgps.front().set(json_matrix(j.at("mgps_omega")), json_matrix(j.at("mgps_delta")).col(0));
    for (auto& f : kernel.factors) f = Matrix::Zero(f.rows(), k);
    rng.deserialize(j.at("rng").get<std::string>());
    for (const auto& t : j.at("t_draws")) fit.t_draws.emplace_back(json_int_matrix(t));
    fit.k_trace = j.at("k_trace").get<std::vector<Index>>();
    fit.births_accepted = j.at("births_accepted").get<long>();
    fit.flips_accepted = j.at("flips_accepted").get<long>();
    return j.at("iteration").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  }
}

Index median_k(const std::vector<SharingMatrix>& draws) {
  std::vector<Index> k;
  for (const auto& d : draws) k.push_back(d.cols());
  std::nth_element(k.begin(), k.begin() + static_cast<std::ptrdiff_t>(k.size() / 2), k.end());
  return k[k.size() / 2];
}

}  // namespace

int tetris_flip_sweep(const TetrisFlipModel& model, IntMatrix& t, Rng& rng) {
  if (t.rows() != static_cast<Index>(model.gram.size()) || t.cols() != model.loadings.cols())
    throw DimensionError("tetris: sharing matrix does not match the model");
  return flip_sweep(model.gram, model.n, model.loadings, model.psi, model.ibp, t, rng);
}

TetrisFit fit_tetris(const MultiStudyDataset& ds, const McmcControl& ctrl, const TetrisOptions& opts,
                     const ProgressFn& progress) {
  ds.validate();
  ctrl.validate();
  const Index p = ds.num_vars(), s_count = ds.num_studies();
  const IbpConfig ibp = opts.ibp ? *opts.ibp : IbpConfig::for_studies(s_count);
  ibp.validate();
  if (!(opts.cap_factor > 0.0)) throw ConfigError("tetris: cap factor must be positive");

  TetrisFit fit;
  fit.seed = ctrl.seed;
  if (!is_centered(ds, 1e-6)) fit.warnings.push_back("data are not centered; the model assumes zero-mean studies");
  MatrixList gram;
  std::vector<double> n;
  for (const auto& y : ds.studies) {
    gram.push_back(cross_product(y));
    n.push_back(static_cast<double>(y.rows()));
  }
  Rng rng(ctrl.seed);

  if (opts.fixed_t) {
    if (opts.fixed_t->studies() != s_count) throw DimensionError("tetris: fixed sharing matrix has the wrong study count");
    fit.t_hat = *opts.fixed_t;
    fit.iterations = 0;
  } else {
    const Index k0 = opts.k_init > 0
                         ? opts.k_init
                         : std::clamp<Index>(static_cast<Index>(std::lround(ibp_expected_columns(s_count, ibp))), 1, p);
    if (k0 > p) throw DimensionError("tetris: initial column count exceeds P");
    const auto cap = static_cast<Index>(opts.cap_factor * static_cast<double>(s_count * k0));
    std::vector<Index> all(static_cast<std::size_t>(k0));
    std::iota(all.begin(), all.end(), Index{0});
    FaKernel kernel(p, IntMatrix::Ones(s_count, k0), {all}, false, opts.hyper, opts.psi_prior);
    kernel.initialize(ds.studies);
    long start = 0;
    if (opts.resume) {
      if (opts.checkpoint_path.empty()) throw ConfigError("tetris: resume needs a checkpoint path");
      start = read_checkpoint(opts.checkpoint_path, kernel, rng, fit, ctrl.seed);
    }
    const auto t0 = std::chrono::steady_clock::now();
    long it = start;
    for (; it < ctrl.nrun; ++it) {
      if (opts.time_budget_seconds > 0.0 &&
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() > opts.time_budget_seconds) {
        fit.phase1_complete = false;
        break;
      }
      fit.flips_accepted += flip_sweep(gram, n, kernel.loadings, kernel.psi, ibp, kernel.mask, rng);
      for (Index s = 0; s < s_count; ++s) fit.births_accepted += singleton_move(kernel, gram, n, ibp, s, rng) ? 1 : 0;
      if (kernel.num_cols() == 0) {
        // Keep one column so the Gibbs sweep has something to update.
        IntMatrix col = IntMatrix::Ones(s_count, 1);
        kernel.append_columns(col, 0, rng);
      }
      if (kernel.num_cols() > cap)
        throw GuardError("tetris: " + std::to_string(kernel.num_cols()) + " columns exceed the cap of " +
                         std::to_string(cap) + "; use a smaller IBP alpha");
      kernel.sweep(ds.studies, rng);
      if (!kernel.loadings.allFinite()) throw NumericError("tetris: non-finite loadings at iteration " + std::to_string(it + 1));
      fit.k_trace.push_back(kernel.num_cols());
      if (ctrl.saves(it)) fit.t_draws.emplace_back(kernel.mask);
      if (!opts.checkpoint_path.empty() && opts.checkpoint_every > 0 && (it + 1) % opts.checkpoint_every == 0)
        write_checkpoint(opts.checkpoint_path, it + 1, kernel, rng, fit, ctrl.seed);
      if (progress) progress(it + 1, ctrl.nrun);
    }
    fit.iterations = it;
    if (!fit.phase1_complete) {
      if (!opts.checkpoint_path.empty()) write_checkpoint(opts.checkpoint_path, it, kernel, rng, fit, ctrl.seed);
      fit.warnings.push_back("time budget reached after " + std::to_string(it) + " iterations; phase 1 is incomplete");
      return fit;
    }
    if (fit.t_draws.empty()) throw DimensionError("tetris: no sharing-matrix draws were saved");
    fit.radius = opts.mode_radius >= 0
                     ? opts.mode_radius
                     : static_cast<Index>(std::floor(0.1 * static_cast<double>(s_count * median_k(fit.t_draws))));
    fit.t_hat = choose_sharing_mode(fit.t_draws, fit.radius);
  }

  // Phase 3: plain Gibbs with the sharing matrix fixed.
  const McmcControl rc = opts.refit ? *opts.refit : ctrl;
  rc.validate();
  const Index k = fit.t_hat.cols();
  std::vector<Index> all(static_cast<std::size_t>(k));
  std::iota(all.begin(), all.end(), Index{0});
  FaKernel kernel(p, fit.t_hat.matrix(), {all}, false, opts.hyper, opts.psi_prior);
  Rng rng3(derive_seed(ctrl.seed, 3));
  kernel.initialize(ds.studies);
  fit.psi_draws.assign(static_cast<std::size_t>(s_count), {});
  for (long it = 0; it < rc.nrun; ++it) {
    kernel.sweep(ds.studies, rng3);
    if (!kernel.loadings.allFinite()) throw NumericError("tetris: non-finite loadings in the refit at iteration " + std::to_string(it + 1));
    if (rc.saves(it)) {
      fit.phi_star_draws.push_back(kernel.loadings);
      for (Index s = 0; s < s_count; ++s) fit.psi_draws[static_cast<std::size_t>(s)].push_back(kernel.psi[static_cast<std::size_t>(s)]);
    }
  }
  return fit;
}

FitResult tetris_decompose(const TetrisFit& fit) {
  if (fit.phi_star_draws.empty()) throw DimensionError("tetris: the refit has no draws");
  const SharingMatrix& t = fit.t_hat;
  const Index p = fit.phi_star_draws.front().rows(), s_count = t.studies();
  const std::vector<bool> common = t.common();
  auto pick = [&](const Matrix& m, const std::vector<bool>& on) {
    Matrix out(p, std::count(on.begin(), on.end(), true));
    Index j = 0;
    for (Index k = 0; k < m.cols(); ++k)
      if (on[static_cast<std::size_t>(k)]) out.col(j++) = m.col(k);
    return out;
  };

  FitResult res;
  res.method = "tetris";
  res.warnings = fit.warnings;
  res.provenance = {fit.iterations, fit.seed, "op"};
  res.k_hat = t.num_common();
  res.j_hat = t.num_specific();
  const double nd = static_cast<double>(fit.phi_star_draws.size());

  MatrixList common_draws;
  res.sigma_phi = Matrix::Zero(p, p);
  for (const auto& d : fit.phi_star_draws) {
    const Matrix c = pick(d, common);
    res.sigma_phi += c * c.transpose();
    common_draws.push_back(c);
  }
  res.sigma_phi /= nd;
  res.phi = res.k_hat > 0 ? op_align(common_draws).mean : Matrix(p, 0);

  for (Index s = 0; s < s_count; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const std::vector<bool> rs = t.residual(s);
    Matrix sl = Matrix::Zero(p, p);
    MatrixList lam;
    for (const auto& d : fit.phi_star_draws) {
      const Matrix l = pick(d, rs);
      sl += l * l.transpose();
      lam.push_back(l);
    }
    sl /= nd;
    const Vector psi = mean_of(fit.psi_draws[su]);
    Matrix sigma = res.sigma_phi + sl;
    sigma.diagonal() += psi;
    res.sigma_lambda.push_back(sl);
    res.sigma_marginal.push_back(sigma);
    res.psi.push_back(psi);
    res.lambda.push_back(lam.front().cols() > 0 ? op_align(lam).mean : Matrix(p, 0));
  }
  res.validate();
  return res;
}

}  // namespace bifa
