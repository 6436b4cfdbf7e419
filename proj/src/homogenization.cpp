#include "effid/homogenization.hpp"

#include <cmath>
#include <stdexcept>

namespace effid {

std::string to_string(ReferenceProvenance p) {
  switch (p) {
    case ReferenceProvenance::corrector_fem: return "corrector_fem";
    case ReferenceProvenance::analytic_1d: return "analytic_1d";
    case ReferenceProvenance::checkerboard_exact: return "checkerboard_exact";
  }
  return "unknown";
}

HomogenizedReference homogenized_matrix(const MeshPtr& cell_mesh, const CoefficientField& field,
                                        const SolverOptions& opts) {
  const CorrectorSolver solver(cell_mesh, field, opts);
  const TriMesh& m = *cell_mesh;
  const Eigen::VectorXd w1 = solver.solve(Vec2(1.0, 0.0)).nodal(m);
  const Eigen::VectorXd w2 = solver.solve(Vec2(0.0, 1.0)).nodal(m);

  Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
  for (int t = 0; t < m.num_triangles(); ++t) {
    const auto g = m.shape_gradients(t);
    const auto& tri = m.triangles[t];
    Eigen::Matrix2d grad;  // columns e_i + grad w_i
    grad.col(0) = Vec2(1.0, 0.0) + w1[tri[0]] * g[0] + w1[tri[1]] * g[1] + w1[tri[2]] * g[2];
    grad.col(1) = Vec2(0.0, 1.0) + w2[tri[0]] * g[0] + w2[tri[1]] * g[1] + w2[tri[2]] * g[2];
    a += m.triangle_area(t) * grad.transpose() * field(m.barycenter(t)).matrix() * grad;
  }
  return {SymMat::from_matrix(a), ReferenceProvenance::corrector_fem, m.n};
}

HomogenizedReference homogenized_matrix(int cell_n, const CoefficientField& field, const SolverOptions& opts) {
  return homogenized_matrix(std::make_shared<const TriMesh>(build_periodic_cell_mesh(cell_n)), field, opts);
}

double harmonic_mean_1d(const std::function<double(double)>& a, int points) {
  if (points < 1) throw std::invalid_argument("harmonic_mean_1d: need at least one point");
  double s = 0.0;
  for (int i = 0; i < points; ++i) {
    const double v = a((i + 0.5) / points);
    if (!(v > 0.0)) throw std::invalid_argument("harmonic_mean_1d: coefficient is not positive");
    s += 1.0 / v;
  }
  return points / s;
}

HomogenizedReference checkerboard_exact() {
  return {SymMat::identity(std::sqrt(4.0 * 16.0)), ReferenceProvenance::checkerboard_exact, 0};
}

}  // namespace effid
