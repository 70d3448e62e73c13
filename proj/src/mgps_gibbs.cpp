#include "bifa/mgps_gibbs.hpp"

#include <string>

namespace bifa {

void McmcControl::validate() const {
  if (nrun < 1) throw ConfigError("nrun must be positive");
  if (burn < 0 || burn >= nrun) throw ConfigError("burn must satisfy 0 <= burn < nrun");
  if (thin < 1) throw ConfigError("thin must be at least 1");
  if (num_saved() < 1) throw ConfigError("no draws would be saved; lower burn or thin");
}

Matrix MgpsFit::sigma_marginal_draw(Index s, Index t) const {
  const auto su = static_cast<std::size_t>(s);
  const auto tu = static_cast<std::size_t>(t);
  Matrix out = psi_draws.at(su).at(tu).asDiagonal();
  if (!phi_draws.empty()) out += phi_draws.at(tu) * phi_draws.at(tu).transpose();
  if (!lambda_draws.empty()) {
    const Matrix& l = lambda_draws.at(su).at(tu);
    out += l * l.transpose();
  }
  return out;
}

namespace {

void check_input(const MultiStudyDataset& ds, Index total_cols, const McmcControl& ctrl,
                 std::vector<std::string>& warnings) {
  ds.validate();
  ctrl.validate();
  if (total_cols > ds.num_vars())
    throw DimensionError("requested " + std::to_string(total_cols) + " factors for " +
                         std::to_string(ds.num_vars()) + " variables");
  if (!is_centered(ds, 1e-6)) warnings.push_back("data are not centered; the model assumes zero-mean studies");
}

template <typename OnSave>
void run_chain(FaKernel& kernel, const MatrixList& data, const McmcControl& ctrl, const ProgressFn& progress,
               OnSave&& on_save) {
  Rng rng(ctrl.seed);
  kernel.initialize(data);
  for (long it = 0; it < ctrl.nrun; ++it) {
    kernel.sweep(data, rng);
    if (!kernel.loadings.allFinite())
      throw NumericError("non-finite loadings at iteration " + std::to_string(it + 1));
    if (ctrl.saves(it)) on_save(kernel);
    if (progress) progress(it + 1, ctrl.nrun);
  }
}

Matrix columns_of(const Matrix& m, const std::vector<Index>& cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
  return out;
}

}  // namespace

MgpsFit fit_stack_fa(const MultiStudyDataset& ds, Index k, const McmcControl& ctrl, const MgpsOptions& opts,
                     const ProgressFn& progress) {
  if (k < 1) throw DimensionError("stack FA needs K >= 1");
  MgpsFit fit;
  fit.model = "stack_fa";
  check_input(ds, k, ctrl, fit.warnings);
  const Index s_count = ds.num_studies();
  std::vector<Index> all(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) all[static_cast<std::size_t>(j)] = j;
  FaKernel kernel(ds.num_vars(), IntMatrix::Ones(s_count, k), {all}, true, opts.hyper, opts.psi_prior);
  fit.psi_shared = true;
  fit.psi_draws.resize(static_cast<std::size_t>(s_count));
  run_chain(kernel, ds.studies, ctrl, progress, [&](const FaKernel& st) {
    fit.phi_draws.push_back(st.loadings);
    for (auto& d : fit.psi_draws) d.push_back(st.psi.front());
  });
  fit.iterations = ctrl.nrun;
  fit.seed = ctrl.seed;
  return fit;
}

MgpsFit fit_ind_fa(const MultiStudyDataset& ds, const std::vector<Index>& j, const McmcControl& ctrl,
                   const MgpsOptions& opts, const ProgressFn& progress) {
  ds.validate();
  if (static_cast<Index>(j.size()) != ds.num_studies()) throw DimensionError("ind FA needs one J per study");
  MgpsFit fit;
  fit.model = "ind_fa";
  const long total = ctrl.nrun * ds.num_studies();
  for (Index s = 0; s < ds.num_studies(); ++s) {
    MultiStudyDataset one = make_dataset({ds.studies[static_cast<std::size_t>(s)]});
    one.variable_names = ds.variable_names;
    ProgressFn inner;
    if (progress) inner = [&, s](long it, long) { progress(s * ctrl.nrun + it, total); };
    MgpsFit part = fit_stack_fa(one, j[static_cast<std::size_t>(s)], ctrl, opts, inner);
    fit.lambda_draws.push_back(std::move(part.phi_draws));
    fit.psi_draws.push_back(std::move(part.psi_draws.front()));
    for (auto& w : part.warnings) fit.warnings.push_back("study " + std::to_string(s + 1) + ": " + w);
  }
  fit.iterations = ctrl.nrun;
  fit.seed = ctrl.seed;
  return fit;
}

MgpsFit fit_bmsfa(const MultiStudyDataset& ds, Index k, const std::vector<Index>& j, const McmcControl& ctrl,
                  const MgpsOptions& opts, const ProgressFn& progress) {
  if (k < 1) throw DimensionError("BMSFA needs K >= 1");
  const Index s_count = ds.num_studies();
  if (static_cast<Index>(j.size()) != s_count) throw DimensionError("BMSFA needs one J per study");
  Index total = k;
  for (Index js : j) {
    if (js < 0) throw DimensionError("J_s must be non-negative");
    total += js;
  }
  MgpsFit fit;
  fit.model = "bmsfa";
  check_input(ds, k, ctrl, fit.warnings);
  for (Index js : j)
    if (k + js > ds.num_vars()) throw DimensionError("K + J_s exceeds the number of variables");

  IntMatrix mask = IntMatrix::Zero(s_count, total);
  std::vector<std::vector<Index>> blocks(1 + static_cast<std::size_t>(s_count));
  for (Index c = 0; c < k; ++c) {
    mask.col(c).setOnes();
    blocks[0].push_back(c);
  }
  Index next = k;
  for (Index s = 0; s < s_count; ++s)
    for (Index c = 0; c < j[static_cast<std::size_t>(s)]; ++c, ++next) {
      mask(s, next) = 1;
      blocks[1 + static_cast<std::size_t>(s)].push_back(next);
    }

  FaKernel kernel(ds.num_vars(), mask, blocks, false, opts.hyper, opts.psi_prior);
  fit.psi_draws.resize(static_cast<std::size_t>(s_count));
  fit.lambda_draws.resize(static_cast<std::size_t>(s_count));
  run_chain(kernel, ds.studies, ctrl, progress, [&](const FaKernel& st) {
    fit.phi_draws.push_back(columns_of(st.loadings, st.blocks[0]));
    for (Index s = 0; s < s_count; ++s) {
      const auto su = static_cast<std::size_t>(s);
      fit.lambda_draws[su].push_back(columns_of(st.loadings, st.blocks[1 + su]));
      fit.psi_draws[su].push_back(st.psi[su]);
    }
  });
  fit.iterations = ctrl.nrun;
  fit.seed = ctrl.seed;
  return fit;
}

FitResult mgps_point_estimates(const MgpsFit& fit) {
  if (fit.num_draws() == 0) throw DimensionError(fit.model + ": no posterior draws");
  FitResult res;
  res.method = fit.model;
  res.psi_shared = fit.psi_shared;
  res.warnings = fit.warnings;
  res.provenance = {fit.iterations, fit.seed, "op"};
  const Index s_count = fit.num_studies();
  const Index p = fit.psi_draws.front().front().size();

  auto aligned = [&](const MatrixList& draws) {
    if (draws.front().cols() == 0) return Matrix(p, 0);
    AlignResult a = op_align(draws);
    if (a.degenerate) res.warnings.push_back("OP alignment met an all-zero draw");
    return a.mean;
  };

  if (!fit.phi_draws.empty()) res.phi = aligned(fit.phi_draws);
  else res.phi = Matrix(p, 0);
  res.k_hat = res.phi.cols();
  res.sigma_phi = res.phi * res.phi.transpose();

  for (Index s = 0; s < s_count; ++s) {
    const auto su = static_cast<std::size_t>(s);
    res.psi.push_back(mean_of(fit.psi_draws[su]));
    if (!fit.lambda_draws.empty()) {
      res.lambda.push_back(aligned(fit.lambda_draws[su]));
      res.sigma_lambda.push_back(res.lambda.back() * res.lambda.back().transpose());
      res.j_hat.push_back(res.lambda.back().cols());
    }
    if (fit.model == "bmsfa") {
      res.sigma_marginal.push_back(res.sigma_phi + res.sigma_lambda.back() + Matrix(res.psi.back().asDiagonal()));
    } else {
      Matrix acc = Matrix::Zero(p, p);
      for (Index t = 0; t < fit.num_draws(); ++t) acc += fit.sigma_marginal_draw(s, t);
      res.sigma_marginal.push_back(acc / static_cast<double>(fit.num_draws()));
    }
  }
  res.validate();
  return res;
}

FactorCounts evd_factor_counts(const FitResult& res, double threshold) {
  FactorCounts out;
  if (res.k_hat > 0) out.k = evd_num_factors(res.sigma_phi, threshold).count;
  for (std::size_t s = 0; s < res.sigma_lambda.size(); ++s)
    out.j.push_back(res.j_hat[s] > 0 ? evd_num_factors(res.sigma_lambda[s], threshold).count : 0);
  return out;
}

}  // namespace bifa
