#include "effid/modes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace effid {

std::string to_string(ModeFamily f) { return f == ModeFamily::affine ? "affine" : "r_modes"; }

ModeBasis ModeBasis::transfer(int m) const {
  ModeBasis out = *this;
  out.mesh_n = m;
  for (auto& f : out.modes) f = f.transfer(m);
  return out;
}

ModeBasis ModeBasis::truncated(int p) const {
  if (p < 1 || p > size()) throw std::invalid_argument("ModeBasis::truncated: bad size");
  ModeBasis out = *this;
  out.modes.resize(p);
  if (!out.eigenvalues.empty()) out.eigenvalues.resize(p);
  return out;
}

Eigen::MatrixXd ModeBasis::gram() const {
  const int p = size();
  Eigen::MatrixXd g(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j <= i; ++j) g(i, j) = g(j, i) = modes[i].inner(modes[j]);
  return g;
}

LaplaceNtD::LaplaceNtD(MeshPtr mesh)
    : solver_(mesh, CoefficientField::constant(SymMat::identity())), mass_(boundary_mass_matrix(*mesh)) {}

Eigen::MatrixXd LaplaceNtD::apply(const Eigen::MatrixXd& nodal) const {
  const int n = mesh().n;
  std::vector<BoundaryFunction> g;
  g.reserve(nodal.cols());
  for (Eigen::Index c = 0; c < nodal.cols(); ++c)
    g.push_back(BoundaryFunction::from_nodal(n, nodal.col(c)).zero_mean());
  const auto u = solver_.solve_all(g);
  Eigen::MatrixXd out(nodal.rows(), nodal.cols());
  for (Eigen::Index c = 0; c < nodal.cols(); ++c) out.col(c) = u[c].trace(mesh());
  return out;
}

Eigen::VectorXd LaplaceNtD::constant() const {
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(mass_.rows());
  return one / std::sqrt(one.dot(mass_ * one));
}

namespace {

// Rotates each cluster of near-equal eigenvalues to a fixed basis. On the
// square the doubly degenerate pairs transform like the vector (x, y) under
// the symmetries, so the pair is turned to the direction pi/8 off the x axis,
// halfway between the mirror axes. Modes aligned with a mirror axis make every
// energy even in a12 (axis) or symmetric under a11 <-> a22 (diagonal), and the
// identification then has a second exact or near-exact root. Larger clusters
// fall back to the eigenvectors of a multiplication operator.
void canonicalize_clusters(const TriMesh& mesh, const SparseMatrix& mass, Eigen::VectorXd& vals,
                           Eigen::MatrixXd& vecs, double gap) {
  const Eigen::Index nb = vecs.rows();
  const double c8 = std::cos(M_PI / 8.0), s8 = std::sin(M_PI / 8.0);
  const auto odd = [](double s) { return s + 4.0 * s * s * s; };
  Eigen::VectorXd target(nb), weight(nb);
  const Eigen::VectorXd lumped = mass * Eigen::VectorXd::Ones(nb);
  for (Eigen::Index k = 0; k < nb; ++k) {
    const Vec2& x = mesh.nodes[mesh.boundary_nodes[k]];
    const double sx = x.x() - 0.5, sy = x.y() - 0.5;
    target[k] = c8 * odd(sx) + s8 * odd(sy);
    weight[k] = (sx * sy + 0.1 * (sx * sx + 0.5 * (sy + 0.2) * (sy + 0.2))) * lumped[k];
  }
  const Eigen::VectorXd mt = mass * target;
  const double tnorm = std::sqrt(target.dot(mt));
  Eigen::Index start = 0;
  while (start < vals.size()) {
    Eigen::Index end = start + 1;
    while (end < vals.size() && std::abs(vals[end] - vals[end - 1]) < gap * std::abs(vals[start])) ++end;
    const Eigen::Index size = end - start;
    if (size > 1) {
      const Eigen::MatrixXd block = vecs.middleCols(start, size);
      Eigen::MatrixXd rot;
      const Eigen::VectorXd c = block.transpose() * mt;
      if (size == 2 && c.norm() > 1e-3 * tnorm) {
        rot.resize(2, 2);
        rot.col(0) = c.normalized();
        rot.col(1) << -rot(1, 0), rot(0, 0);
      } else {
        const Eigen::MatrixXd w = block.transpose() * weight.asDiagonal() * block;
        rot = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (w + w.transpose())).eigenvectors();
      }
      vecs.middleCols(start, size) = block * rot;
      const Eigen::VectorXd v = vals.segment(start, size);
      for (Eigen::Index i = 0; i < size; ++i) vals[start + i] = rot.col(i).dot(v.asDiagonal() * rot.col(i));
    }
    start = end;
  }
}

void fix_signs(Eigen::MatrixXd& vecs) {
  for (Eigen::Index c = 0; c < vecs.cols(); ++c) {
    // Symmetric modes attain their maximum at several dofs; the first one
    // within a relative 1e-6 of it decides, so rounding cannot flip the sign.
    const double top = vecs.col(c).cwiseAbs().maxCoeff();
    Eigen::Index arg = 0;
    while (std::abs(vecs(arg, c)) < (1.0 - 1e-6) * top) ++arg;
    if (vecs(arg, c) < 0.0) vecs.col(c) *= -1.0;
  }
}

}  // namespace

ModeBasis compute_r_modes(const MeshPtr& mesh, int p, const ModeOptions& opts) {
  const int nb = mesh->num_boundary_dofs();
  if (p < 1 || p > nb - 1)
    throw std::invalid_argument("compute_r_modes: need 1 <= P <= " + std::to_string(nb - 1));
  const LaplaceNtD ntd(mesh);
  const int nev = std::min(p + 2, nb - 1);
  EigenOptions eo;
  eo.block = nev;
  eo.tol = opts.tol;
  eo.seed = opts.seed;
  eo.which = SpectrumEnd::largest_algebraic;
  const SparseMatrix& mass = ntd.mass();
  EigenResult er = block_krylov_eigs([&](const Eigen::MatrixXd& x) { return ntd.apply(x); },
                                     [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return mass * x; },
                                     ntd.constant(), nb, nev, eo);
  if (!er.converged)
    throw std::runtime_error("compute_r_modes: eigensolver stalled, max residual " +
                             std::to_string(er.residuals.maxCoeff()));
  canonicalize_clusters(*mesh, mass, er.values, er.vectors, opts.cluster_gap);
  fix_signs(er.vectors);

  ModeBasis basis;
  basis.family = ModeFamily::r_modes;
  basis.mesh_n = mesh->n;
  for (int i = 0; i < p; ++i) {
    if (!(er.values[i] > 0.0)) throw std::runtime_error("compute_r_modes: non-positive eigenvalue");
    basis.modes.push_back(BoundaryFunction::from_nodal(mesh->n, er.vectors.col(i)));
    basis.eigenvalues.push_back(er.values[i]);
  }
  return basis;
}

Eigen::MatrixXd nodal_values(const ModeBasis& basis) {
  const int nb = 4 * basis.mesh_n;
  Eigen::MatrixXd out(nb, basis.size());
  for (int c = 0; c < basis.size(); ++c) {
    const Eigen::VectorXd& v = basis.modes[c].edge_values();
    for (int k = 0; k < nb; ++k) out(k, c) = v[2 * k];
  }
  return out;
}

ModeBasis affine_modes(int n) {
  ModeBasis basis;
  basis.family = ModeFamily::affine;
  basis.mesh_n = n;
  for (const Vec2& e : {Vec2(1.0, 0.0), Vec2(0.0, 1.0), Vec2(0.5, 0.5)})
    basis.modes.push_back(BoundaryFunction::normal_component(n, e).zero_mean().normalized());
  return basis;
}

int choose_p(double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("choose_p: epsilon must be positive");
  return epsilon < 0.2 - 1e-12 ? 3 : 5;
}

}  // namespace effid
