#include "effid/lanczos.hpp"

#include "effid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace effid {

namespace {

struct Basis {
  Eigen::MatrixXd v, mv, av;
};

void append_cols(Eigen::MatrixXd& dst, const Eigen::MatrixXd& src) {
  const Eigen::Index old = dst.cols();
  dst.conservativeResize(src.rows(), old + src.cols());
  dst.rightCols(src.cols()) = src;
}

}  // namespace

EigenResult block_krylov_eigs(const BlockOperator& a, const BlockOperator& m, const Eigen::MatrixXd& deflate,
                              Eigen::Index dim, int nev, const EigenOptions& opts) {
  const Eigen::Index avail = dim - deflate.cols();
  if (nev < 1 || nev > avail)
    throw std::invalid_argument("block_krylov_eigs: requested " + std::to_string(nev) + " eigenpairs from a " +
                                std::to_string(avail) + "-dimensional space");
  const int b = static_cast<int>(std::min<Eigen::Index>(std::max(opts.block, 1), avail));
  SplitMix64 rng(opts.seed);
  const Eigen::MatrixXd mdeflate = deflate.cols() > 0 ? m(deflate) : Eigen::MatrixXd();

  Basis basis;
  basis.v.resize(dim, 0);
  basis.mv.resize(dim, 0);
  basis.av.resize(dim, 0);

  // M-orthonormalizes x against the deflation space, the basis and itself.
  // Columns that collapse are replaced by fresh random directions while the
  // space is not exhausted.
  const auto extend = [&](Eigen::MatrixXd x) {
    Eigen::MatrixXd out(dim, 0);
    Eigen::MatrixXd mout(dim, 0);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (basis.v.cols() + out.cols() >= avail) break;
      Eigen::VectorXd col = x.col(c);
      for (int attempt = 0; attempt < 5; ++attempt) {
        const double before = std::sqrt(std::max(0.0, col.dot(m(col).col(0))));
        for (int pass = 0; pass < 2; ++pass) {
          if (mdeflate.cols() > 0) col -= deflate * (mdeflate.transpose() * col);
          if (basis.v.cols() > 0) col -= basis.v * (basis.mv.transpose() * col);
          if (out.cols() > 0) col -= out * (mout.transpose() * col);
        }
        const Eigen::VectorXd mc = m(col).col(0);
        const double nrm = std::sqrt(std::max(0.0, col.dot(mc)));
        if (before > 0.0 && nrm > 1e-10 * before) {
          col /= nrm;
          append_cols(out, col);
          append_cols(mout, mc / nrm);
          break;
        }
        for (Eigen::Index i = 0; i < dim; ++i) col[i] = rng.normal();
      }
    }
    return std::pair{out, mout};
  };

  const auto add = [&](const Eigen::MatrixXd& x) {
    auto [v, mv] = extend(x);
    if (v.cols() == 0) return;
    const Eigen::MatrixXd av = a(v);
    append_cols(basis.v, v);
    append_cols(basis.mv, mv);
    append_cols(basis.av, av);
  };

  EigenResult res;
  double last_residual = 0.0;
  Eigen::MatrixXd start(dim, b);
  for (Eigen::Index j = 0; j < b; ++j)
    for (Eigen::Index i = 0; i < dim; ++i) start(i, j) = rng.normal();
  add(start);
  res.operator_applications = static_cast<int>(basis.v.cols());

  for (res.iterations = 1; res.iterations <= opts.max_iterations; ++res.iterations) {
    Eigen::MatrixXd h = basis.mv.transpose() * basis.av;
    h = 0.5 * (h + h.transpose()).eval();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    const Eigen::Index k = h.rows();
    std::vector<Eigen::Index> order(k);
    std::iota(order.begin(), order.end(), 0);
    const auto& theta = es.eigenvalues();
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
      return opts.which == SpectrumEnd::largest_magnitude ? std::abs(theta[i]) > std::abs(theta[j])
                                                          : theta[i] > theta[j];
    });

    const Eigen::Index keep = std::min<Eigen::Index>(k, nev + b);
    Eigen::MatrixXd s(k, keep);
    Eigen::VectorXd vals(keep);
    for (Eigen::Index i = 0; i < keep; ++i) {
      s.col(i) = es.eigenvectors().col(order[i]);
      vals[i] = theta[order[i]];
    }
    const Eigen::MatrixXd y = basis.v * s;
    const Eigen::MatrixXd ay = basis.av * s;
    const Eigen::MatrixXd r = ay - y * vals.asDiagonal();
    const Eigen::MatrixXd mr = m(r);
    Eigen::VectorXd rn(keep);
    for (Eigen::Index i = 0; i < keep; ++i) rn[i] = std::sqrt(std::max(0.0, r.col(i).dot(mr.col(i))));

    const double scale = std::max(std::abs(vals[0]), 1e-300);
    const bool exhausted = basis.v.cols() >= avail;
    last_residual = rn.head(std::min<Eigen::Index>(keep, nev)).maxCoeff() / scale;
    bool done = k >= nev;
    for (int i = 0; done && i < nev; ++i) done = rn[i] <= opts.tol * scale;
    if (done || exhausted) {
      res.values = vals.head(nev);
      res.vectors = y.leftCols(nev);
      res.residuals = rn.head(nev);
      res.converged = true;
      return res;
    }

    // Next directions: residuals of the leading unconverged Ritz vectors.
    std::vector<Eigen::Index> pick;
    for (Eigen::Index i = 0; i < keep && static_cast<int>(pick.size()) < b; ++i)
      if (rn[i] > opts.tol * scale) pick.push_back(i);
    Eigen::MatrixXd next(dim, static_cast<Eigen::Index>(pick.size()));
    for (std::size_t j = 0; j < pick.size(); ++j) next.col(static_cast<Eigen::Index>(j)) = r.col(pick[j]);

    if (basis.v.cols() + b > opts.max_basis) {
      basis.v = y;
      basis.av = ay;
      basis.mv = m(y);
    }
    const Eigen::Index before = basis.v.cols();
    add(next);
    res.operator_applications += static_cast<int>(basis.v.cols() - before);
    if (basis.v.cols() == before) {
      // No new direction survived orthogonalization: the basis is invariant.
      res.values = vals.head(nev);
      res.vectors = y.leftCols(nev);
      res.residuals = rn.head(nev);
      res.converged = rn.head(nev).maxCoeff() <= opts.tol * scale;
      return res;
    }
  }
  throw std::runtime_error("block_krylov_eigs: no convergence after " + std::to_string(opts.max_iterations) +
                           " iterations (relative residual " + std::to_string(last_residual) + ")");
}

}  // namespace effid
