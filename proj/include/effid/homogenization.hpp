#pragma once

#include "effid/coefficients.hpp"
#include "effid/mesh.hpp"
#include "effid/solver.hpp"

#include <functional>
#include <string>

namespace effid {

enum class ReferenceProvenance { corrector_fem, analytic_1d, checkerboard_exact };

std::string to_string(ReferenceProvenance p);

struct HomogenizedReference {
  SymMat matrix;
  ReferenceProvenance provenance = ReferenceProvenance::corrector_fem;
  int cell_n = 0;  // corrector_fem only
};

/// A*_ij = int_Q (e_i + grad w_i) . A (e_j + grad w_j), barycenter quadrature.
HomogenizedReference homogenized_matrix(const MeshPtr& cell_mesh, const CoefficientField& field,
                                        const SolverOptions& opts = {});
HomogenizedReference homogenized_matrix(int cell_n, const CoefficientField& field,
                                        const SolverOptions& opts = {});

/// (int_0^1 1/a)^{-1} by composite midpoint quadrature.
double harmonic_mean_1d(const std::function<double(double)>& a, int points = 10000);

/// sqrt(4 * 16) Id for the two-phase checkerboard.
HomogenizedReference checkerboard_exact();

}  // namespace effid
