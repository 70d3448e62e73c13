#include "bifa/fa_kernel.hpp"

#include "bifa/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace bifa {

namespace {

// Probabilistic-PCA style start: leading eigenvectors scaled by the excess
// of their eigenvalue over the mean of the discarded spectrum.
Matrix ppca_loadings(const Matrix& cov, Index k) {
  const SymEigen es = sym_eigen_desc(symmetrize(cov));
  const Index p = cov.rows();
  k = std::min(k, p);
  const double noise = k < p ? es.values.tail(p - k).mean() : 0.0;
  Matrix out(p, k);
  for (Index j = 0; j < k; ++j) out.col(j) = es.vectors.col(j) * std::sqrt(std::max(es.values(j) - noise, 0.0));
  return out;
}

Matrix sample_cov(const Matrix& y) { return cross_product(y) / static_cast<double>(y.rows()); }

}  // namespace

FaKernel::FaKernel(Index p, IntMatrix mask_in, std::vector<std::vector<Index>> blocks_in, bool shared,
                   MgpsHyper hyper, PsiPrior prior)
    : loadings(Matrix::Zero(p, mask_in.cols())),
      mask(std::move(mask_in)),
      psi_shared(shared),
      factor_var(Vector::Ones(mask.cols())),
      blocks(std::move(blocks_in)),
      psi_prior(prior) {
  for (const auto& b : blocks) mgps.emplace_back(p, static_cast<Index>(b.size()), hyper);
  psi.assign(static_cast<std::size_t>(mask.rows()), Vector::Ones(p));
}

std::vector<Index> FaKernel::active_columns(Index s) const {
  std::vector<Index> out;
  for (Index k = 0; k < mask.cols(); ++k)
    if (mask(s, k)) out.push_back(k);
  return out;
}

void FaKernel::initialize(const MatrixList& data) {
  const Index p = num_vars();
  const Index s_count = num_studies();
  if (static_cast<Index>(data.size()) != s_count) throw DimensionError("kernel: study count mismatch");
  MatrixList cov;
  for (const auto& y : data) cov.push_back(sample_cov(y));
  Matrix pooled = Matrix::Zero(p, p);
  Index n_total = 0;
  for (Index s = 0; s < s_count; ++s) {
    pooled += cov[static_cast<std::size_t>(s)] * static_cast<double>(data[static_cast<std::size_t>(s)].rows());
    n_total += data[static_cast<std::size_t>(s)].rows();
  }
  pooled /= static_cast<double>(n_total);

  loadings.setZero();
  std::vector<Index> shared, rest;
  for (Index k = 0; k < num_cols(); ++k) (mask.col(k).minCoeff() == 1 ? shared : rest).push_back(k);
  if (!shared.empty()) {
    const Matrix l = ppca_loadings(pooled, static_cast<Index>(shared.size()));
    for (std::size_t j = 0; j < shared.size() && static_cast<Index>(j) < l.cols(); ++j)
      loadings.col(shared[j]) = l.col(static_cast<Index>(j));
  }
  // Remaining columns greedily, each from the average residual covariance of
  // the studies that use it.
  for (Index k : rest) {
    Matrix acc = Matrix::Zero(p, p);
    int users = 0;
    for (Index s = 0; s < s_count; ++s) {
      if (!mask(s, k)) continue;
      Matrix r = cov[static_cast<std::size_t>(s)];
      for (Index j : active_columns(s))
        if (j != k) r -= loadings.col(j) * loadings.col(j).transpose();
      acc += r;
      ++users;
    }
    if (users == 0) continue;
    loadings.col(k) = ppca_loadings(acc / users, 1).col(0);
  }

  Vector shared_psi = Vector::Zero(p);
  for (Index s = 0; s < s_count; ++s) {
    const Matrix& c = cov[static_cast<std::size_t>(s)];
    Vector explained = Vector::Zero(p);
    for (Index j : active_columns(s)) explained += loadings.col(j).cwiseAbs2();
    Vector v = c.diagonal() - explained;
    for (Index i = 0; i < p; ++i) v(i) = std::max({v(i), 0.1 * c(i, i), 1e-4});
    psi[static_cast<std::size_t>(s)] = v;
    shared_psi += v * static_cast<double>(data[static_cast<std::size_t>(s)].rows());
  }
  if (psi_shared) {
    shared_psi /= static_cast<double>(n_total);
    for (auto& v : psi) v = shared_psi;
  }
  factors.clear();
  for (const auto& y : data) factors.push_back(Matrix::Zero(y.rows(), num_cols()));
}

void FaKernel::draw_factors(const MatrixList& data, Rng& rng) {
  const Index kstar = num_cols();
  factors.resize(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Matrix& y = data[s];
    const auto act = active_columns(static_cast<Index>(s));
    const Index q = static_cast<Index>(act.size());
    Matrix& f = factors[s];
    f.setZero(y.rows(), kstar);
    if (q == 0) continue;
    Matrix b(num_vars(), q);
    for (Index j = 0; j < q; ++j) b.col(j) = loadings.col(act[static_cast<std::size_t>(j)]);
    const Matrix bw = psi[s].cwiseInverse().asDiagonal() * b;  // Psi^{-1} B
    Matrix m = b.transpose() * bw;
    for (Index j = 0; j < q; ++j) m(j, j) += 1.0 / factor_var(act[static_cast<std::size_t>(j)]);
    const auto llt = robust_llt(m);
    Matrix draw = llt.solve(bw.transpose() * y.transpose());  // q x N
    Matrix z(q, y.rows());
    for (Index i = 0; i < y.rows(); ++i)
      for (Index j = 0; j < q; ++j) z(j, i) = rng.normal();
    draw += llt.matrixU().solve(z);
    for (Index j = 0; j < q; ++j) f.col(act[static_cast<std::size_t>(j)]) = draw.row(j).transpose();
  }
}

void FaKernel::draw_loadings(const MatrixList& data, Rng& rng) {
  const Index p = num_vars();
  const Index kstar = num_cols();
  if (kstar == 0) return;
  MatrixList gram, cross;
  for (std::size_t s = 0; s < data.size(); ++s) {
    gram.push_back(cross_product(factors[s]));
    cross.push_back(factors[s].transpose() * data[s]);  // K* x P
  }
  const Matrix prior = prior_precision();
  for (Index i = 0; i < p; ++i) {
    Matrix prec = prior.row(i).asDiagonal();
    Vector lin = Vector::Zero(kstar);
    for (std::size_t s = 0; s < data.size(); ++s) {
      const double w = 1.0 / psi[s](i);
      prec += w * gram[s];
      lin += w * cross[s].col(i);
    }
    loadings.row(i) = sample_gaussian_canonical(prec, lin, rng).transpose();
  }
}

void FaKernel::draw_psi(const MatrixList& data, Rng& rng) {
  const Index p = num_vars();
  VectorList sse;
  Vector pooled = Vector::Zero(p);
  Index n_total = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Matrix resid = data[s] - factors[s] * loadings.transpose();
    sse.push_back(resid.colwise().squaredNorm().transpose());
    pooled += sse.back();
    n_total += data[s].rows();
  }
  if (psi_shared) {
    Vector v(p);
    for (Index i = 0; i < p; ++i)
      v(i) = rng.inv_gamma(psi_prior.shape + 0.5 * static_cast<double>(n_total), psi_prior.scale + 0.5 * pooled(i));
    for (auto& x : psi) x = v;
    return;
  }
  for (std::size_t s = 0; s < data.size(); ++s) {
    const double n = static_cast<double>(data[s].rows());
    for (Index i = 0; i < p; ++i)
      psi[s](i) = rng.inv_gamma(psi_prior.shape + 0.5 * n, psi_prior.scale + 0.5 * sse[s](i));
  }
}

void FaKernel::draw_shrinkage(Rng& rng) {
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].empty()) continue;
    Matrix sub(num_vars(), static_cast<Index>(blocks[b].size()));
    for (std::size_t j = 0; j < blocks[b].size(); ++j) sub.col(static_cast<Index>(j)) = loadings.col(blocks[b][j]);
    mgps_gibbs_update(mgps[b], sub, rng);
  }
}

void FaKernel::sweep(const MatrixList& data, Rng& rng) {
  draw_factors(data, rng);
  draw_loadings(data, rng);
  draw_psi(data, rng);
  draw_shrinkage(rng);
}

Matrix FaKernel::prior_precision() const {
  Matrix out = Matrix::Ones(num_vars(), num_cols());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Matrix prec = mgps[b].precision();
    for (std::size_t j = 0; j < blocks[b].size(); ++j) out.col(blocks[b][j]) = prec.col(static_cast<Index>(j));
  }
  return out;
}

void FaKernel::append_columns(const IntMatrix& new_mask_cols, std::size_t block, Rng& rng) {
  const Index n = new_mask_cols.cols();
  if (n == 0) return;
  if (new_mask_cols.rows() != num_studies()) throw DimensionError("kernel: appended mask has wrong row count");
  const Index k0 = num_cols();
  const Index p = num_vars();
  mgps[block].append_columns(n, rng);
  const Index local0 = mgps[block].cols() - n;
  const Matrix prec = mgps[block].precision();
  loadings.conservativeResize(p, k0 + n);
  mask.conservativeResize(mask.rows(), k0 + n);
  factor_var.conservativeResize(k0 + n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < p; ++i) loadings(i, k0 + j) = rng.normal() / std::sqrt(prec(i, local0 + j));
    mask.col(k0 + j) = new_mask_cols.col(j);
    factor_var(k0 + j) = 1.0;
    blocks[block].push_back(k0 + j);
  }
  for (auto& f : factors) {
    f.conservativeResize(f.rows(), k0 + n);
    f.rightCols(n).setZero();
  }
}

void FaKernel::keep_columns(const std::vector<Index>& cols) {
  const Index k_old = num_cols();
  std::vector<Index> remap(static_cast<std::size_t>(k_old), -1);
  for (std::size_t j = 0; j < cols.size(); ++j) remap[static_cast<std::size_t>(cols[j])] = static_cast<Index>(j);
  const Index k_new = static_cast<Index>(cols.size());
  Matrix l(num_vars(), k_new);
  IntMatrix m(mask.rows(), k_new);
  Vector v(k_new);
  for (Index j = 0; j < k_new; ++j) {
    l.col(j) = loadings.col(cols[static_cast<std::size_t>(j)]);
    m.col(j) = mask.col(cols[static_cast<std::size_t>(j)]);
    v(j) = factor_var(cols[static_cast<std::size_t>(j)]);
  }
  for (auto& f : factors) {
    Matrix g(f.rows(), k_new);
    for (Index j = 0; j < k_new; ++j) g.col(j) = f.col(cols[static_cast<std::size_t>(j)]);
    f = std::move(g);
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::vector<Index> local_keep, new_block;
    for (std::size_t j = 0; j < blocks[b].size(); ++j) {
      const Index r = remap[static_cast<std::size_t>(blocks[b][j])];
      if (r < 0) continue;
      local_keep.push_back(static_cast<Index>(j));
      new_block.push_back(r);
    }
    mgps[b].keep_columns(local_keep);
    blocks[b] = std::move(new_block);
  }
  loadings = std::move(l);
  mask = std::move(m);
  factor_var = std::move(v);
}

Matrix FaKernel::marginal_covariance(Index s) const {
  Matrix out = psi[static_cast<std::size_t>(s)].asDiagonal();
  for (Index k : active_columns(s)) out += factor_var(k) * loadings.col(k) * loadings.col(k).transpose();
  return out;
}

}  // namespace bifa
