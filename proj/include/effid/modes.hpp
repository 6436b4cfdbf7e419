#pragma once

#include "effid/lanczos.hpp"
#include "effid/mesh.hpp"
#include "effid/solver.hpp"

#include <string>
#include <vector>

namespace effid {

enum class ModeFamily { r_modes, affine };

std::string to_string(ModeFamily f);

/// Boundary data spanning the test space V^P.
struct ModeBasis {
  ModeFamily family = ModeFamily::r_modes;
  int mesh_n = 0;
  std::vector<BoundaryFunction> modes;
  std::vector<double> eigenvalues;  // r_modes only, non-increasing

  int size() const { return static_cast<int>(modes.size()); }
  /// Same functions on a mesh with m subdivisions per side.
  ModeBasis transfer(int m) const;
  /// First p modes.
  ModeBasis truncated(int p) const;
  /// Gram matrix <phi_p, phi_q>.
  Eigen::MatrixXd gram() const;
};

/// Neumann-to-Dirichlet map of the Laplacian on the continuous P1 boundary
/// space: g -> trace w with -Lap w = 0, grad w . n = g, zero boundary mean.
/// Self-adjoint in the boundary mass inner product.
class LaplaceNtD {
 public:
  explicit LaplaceNtD(MeshPtr mesh);

  Eigen::MatrixXd apply(const Eigen::MatrixXd& nodal) const;
  const SparseMatrix& mass() const { return mass_; }
  const TriMesh& mesh() const { return solver_.mesh(); }
  /// M-normalized constant, the direction deflated from the spectrum.
  Eigen::VectorXd constant() const;

 private:
  NeumannSolver solver_;
  SparseMatrix mass_;
};

struct ModeOptions {
  double tol = 1e-10;
  double cluster_gap = 1e-8;  // relative eigenvalue gap below which modes form a cluster
  std::uint64_t seed = 0x6d6f646573ULL;
};

/// Leading P eigenpairs of the Laplace Neumann-to-Dirichlet operator.
///
/// Pairs of numerically repeated eigenvalues are rotated so the first mode
/// points pi/8 off the x axis (larger clusters: eigenvectors of a fixed
/// multiplication operator inside the cluster), and each mode's
/// largest-magnitude nodal value is made positive, so the basis is
/// reproducible.
ModeBasis compute_r_modes(const MeshPtr& mesh, int p, const ModeOptions& opts = {});

/// Nodal values of each mode at the boundary dofs (r_modes only).
Eigen::MatrixXd nodal_values(const ModeBasis& basis);

/// n1, n2 and (n1 + n2)/2, each with zero mean and unit norm. The three are
/// linearly dependent, so they are not orthogonalized.
ModeBasis affine_modes(int n);

/// 3 for eps < 0.2, 5 otherwise.
int choose_p(double epsilon);

}  // namespace effid
