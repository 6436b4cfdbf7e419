#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>

namespace effid {

enum class SpectrumEnd { largest_algebraic, largest_magnitude };

struct EigenOptions {
  int block = 4;
  int max_basis = 240;
  double tol = 1e-10;  // residual relative to the dominant Ritz value
  int max_iterations = 500;
  std::uint64_t seed = 0x5eed;
  SpectrumEnd which = SpectrumEnd::largest_algebraic;
};

struct EigenResult {
  Eigen::VectorXd values;   // selected Ritz values, dominant first
  Eigen::MatrixXd vectors;  // M-orthonormal columns
  Eigen::VectorXd residuals;
  int iterations = 0;
  int operator_applications = 0;  // columns
  bool converged = false;
};

using BlockOperator = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Block Krylov iteration with Rayleigh-Ritz for an operator A that is
/// self-adjoint in the inner product <x, y> = x^T M y.
///
/// `deflate` holds M-orthonormal columns spanning an invariant subspace to
/// exclude (e.g. constants); pass an empty matrix for none. Each step
/// extends the basis by the residuals of the leading Ritz vectors, so one
/// block application of A per step. When the basis reaches `max_basis` it
/// is restarted from the leading Ritz vectors.
EigenResult block_krylov_eigs(const BlockOperator& a, const BlockOperator& m, const Eigen::MatrixXd& deflate,
                              Eigen::Index dim, int nev, const EigenOptions& opts = {});

}  // namespace effid
