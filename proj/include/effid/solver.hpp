#pragma once

#include "effid/coefficients.hpp"
#include "effid/mesh.hpp"
#include "effid/sym_mat.hpp"

#include <memory>
#include <string>
#include <vector>

namespace effid {

enum class LinearBackend { automatic, cholmod, simplicial_llt, conjugate_gradient };

struct SolverOptions {
  LinearBackend backend = LinearBackend::automatic;
  double cg_tolerance = 1e-10;
  int cg_max_iterations = 20000;
};

LinearBackend parse_backend(const std::string& name);
std::string to_string(LinearBackend b);
bool cholmod_available();

/// Factorized symmetric positive definite operator. Solves are safe to call
/// from several threads.
class SpdFactorization {
 public:
  explicit SpdFactorization(const SparseMatrix& a, const SolverOptions& opts = {});
  ~SpdFactorization();
  SpdFactorization(SpdFactorization&&) noexcept;
  SpdFactorization& operator=(SpdFactorization&&) noexcept;

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  LinearBackend backend() const;
  Eigen::Index rows() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Boundary datum on the unit-square boundary loop of a mesh with n
/// subdivisions per side.
///
/// Stored edge-wise: values[2k] and values[2k+1] are the values at the start
/// and at the end of boundary edge k, linear in between. This holds both the
/// continuous P1 traces and data with corner jumps such as components of the
/// outward normal.
class BoundaryFunction {
 public:
  BoundaryFunction() = default;
  BoundaryFunction(int n, Eigen::VectorXd edge_values);

  static BoundaryFunction zero(int n);
  /// Continuous function from its values at the boundary dofs (loop order).
  static BoundaryFunction from_nodal(int n, const Eigen::VectorXd& nodal);
  /// e . n on every edge.
  static BoundaryFunction normal_component(int n, const Vec2& e);

  int n() const { return n_; }
  int num_edges() const { return 4 * n_; }
  const Eigen::VectorXd& edge_values() const { return values_; }
  double edge_length() const { return 1.0 / n_; }

  /// Value at arc length s, taken from edge `edge` (resolves corners and jumps).
  double value_on_edge(int edge, double s) const;

  double integral() const;
  double inner(const BoundaryFunction& o) const;
  double norm() const;
  /// L2(boundary) pairing with a continuous nodal trace of the same mesh.
  double inner_trace(const Eigen::VectorXd& trace) const;
  /// Load vector over boundary dofs: entry a = integral of g * phi_a.
  Eigen::VectorXd load() const;

  BoundaryFunction zero_mean() const;
  BoundaryFunction normalized() const;
  /// Same function on a mesh with m subdivisions; exact when m is a multiple of n.
  /// Coarsening keeps the values at the coarse vertices.
  BoundaryFunction transfer(int m) const;

  BoundaryFunction& operator+=(const BoundaryFunction& o);
  BoundaryFunction& operator*=(double s);
  friend BoundaryFunction operator+(BoundaryFunction a, const BoundaryFunction& b) { return a += b; }
  friend BoundaryFunction operator-(BoundaryFunction a, const BoundaryFunction& b) {
    return a += b * -1.0;
  }
  friend BoundaryFunction operator*(BoundaryFunction a, double s) { return a *= s; }
  friend BoundaryFunction operator*(double s, BoundaryFunction a) { return a *= s; }

 private:
  int n_ = 0;
  Eigen::VectorXd values_;
};

/// Linear combination sum_p c_p f_p.
BoundaryFunction combine(const std::vector<BoundaryFunction>& f, const Eigen::VectorXd& c);

struct NeumannSolution {
  Eigen::VectorXd values;  // nodal, zero boundary mean
  BoundaryFunction datum;
  int mesh_n = 0;

  Eigen::VectorXd trace(const TriMesh& mesh) const { return boundary_trace(mesh, values); }
};

/// P1 stiffness matrix with the coefficient sampled at triangle barycenters.
SparseMatrix assemble_stiffness(const TriMesh& mesh, const CoefficientField& field);

/// Pure-Neumann problem -div(A grad u) = 0, (A grad u).n = g, with zero
/// boundary mean of u. The operator is factorized once at construction.
class NeumannSolver {
 public:
  NeumannSolver(MeshPtr mesh, const CoefficientField& field, const SolverOptions& opts = {});

  /// Throws std::invalid_argument when g has nonzero mean; g is projected to
  /// exactly zero mean before the solve.
  NeumannSolution solve(const BoundaryFunction& g) const;
  std::vector<NeumannSolution> solve_all(const std::vector<BoundaryFunction>& g) const;

  const TriMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  const SparseMatrix& stiffness() const { return stiffness_; }
  LinearBackend backend() const { return factor_.backend(); }

  /// Relative residual of the discrete variational equations.
  double residual(const NeumannSolution& u) const;

 private:
  Eigen::VectorXd rhs(const BoundaryFunction& g) const;

  MeshPtr mesh_;
  SparseMatrix stiffness_;
  SpdFactorization factor_;
  double perimeter_ = 0.0;
};

NeumannSolution solve_neumann(const MeshPtr& mesh, const CoefficientField& field, const BoundaryFunction& g);

/// Stored energy -1/2 <g, trace u>.
double energy(const TriMesh& mesh, const BoundaryFunction& g, const NeumannSolution& u);

/// (int (d1 u)^2, int d1 u d2 u, int (d2 u)^2) for a nodal P1 field.
SymMat gradient_gram(const TriMesh& mesh, const Eigen::VectorXd& u);
/// Symmetrized cross version: entries int (d_i u d_j v + d_j u d_i v) / 2.
SymMat gradient_cross_gram(const TriMesh& mesh, const Eigen::VectorXd& u, const Eigen::VectorXd& v);

struct CorrectorSolution {
  Eigen::VectorXd values;  // over independent periodic dofs, zero cell average
  Vec2 direction = Vec2::Zero();

  /// Nodal values on the full cell mesh (periodic copies filled in).
  Eigen::VectorXd nodal(const TriMesh& cell) const;
};

/// Periodic cell problems -div(A (grad w + p)) = 0 sharing one factorization.
class CorrectorSolver {
 public:
  CorrectorSolver(MeshPtr cell_mesh, const CoefficientField& field, const SolverOptions& opts = {});

  CorrectorSolution solve(const Vec2& p) const;

  const TriMesh& mesh() const { return *mesh_; }
  const CoefficientField& field() const { return field_; }

 private:
  MeshPtr mesh_;
  CoefficientField field_;
  std::vector<SymMat> cell_values_;  // coefficient at each barycenter
  SparseMatrix reduced_;
  SpdFactorization factor_;
};

CorrectorSolution solve_corrector(const MeshPtr& cell_mesh, const CoefficientField& field, const Vec2& p);

}  // namespace effid
