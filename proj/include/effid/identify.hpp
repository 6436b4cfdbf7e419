#pragma once

#include "effid/coefficients.hpp"
#include "effid/descent.hpp"
#include "effid/mesh.hpp"
#include "effid/modes.hpp"
#include "effid/solver.hpp"
#include "effid/sym_mat.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace effid {

enum class Provenance { simulated, injected };

/// Observables of the oscillatory problem for a set of boundary modes.
struct Measurements {
  ModeBasis basis;           // on the coarse mesh
  Eigen::VectorXd energies;  // E(A_eps, phi_p)
  /// cross(p, q) = <phi_q, trace u_eps(phi_p)>.
  std::optional<Eigen::MatrixXd> cross;
  /// Fine-mesh fields, one column per mode; empty unless recorded.
  Eigen::MatrixXd boundary_traces;
  Eigen::MatrixXd volume_fields;
  int fine_n = 0;

  Provenance provenance = Provenance::simulated;
  std::string field_name;
  std::uint64_t seed = 0;
  int realizations = 1;

  int size() const { return static_cast<int>(energies.size()); }
  bool has_traces() const { return boundary_traces.cols() == size() && size() > 0; }
  bool has_volume() const { return volume_fields.cols() == size() && size() > 0; }
  /// First p modes.
  Measurements truncated(int p) const;
};

/// Solves the oscillatory problem on `fine` for every mode of `basis`. The
/// fine mesh must be a refinement of the basis mesh.
Measurements simulate_measurements(const CoefficientField& field, const MeshPtr& fine, const ModeBasis& basis,
                                   bool keep_fields = false, const SolverOptions& opts = {});

/// Entrywise mean over realizations (energies, cross tables and fields).
Measurements average_measurements(const std::vector<Measurements>& runs);

struct CoarseEvaluation {
  SymMat a;
  Eigen::VectorXd energies;  // E(A, phi_p)
  Eigen::MatrixXd cross;     // <phi_q, trace u(A, phi_p)>
  Eigen::MatrixXd fields;    // nodal, one column per mode
  Eigen::MatrixXd traces;    // boundary dofs, one column per mode
};

/// Constant-coefficient solves on the coarse mesh for a fixed mode basis.
class CoarseModel {
 public:
  CoarseModel(MeshPtr coarse, ModeBasis basis, const SolverOptions& opts = {LinearBackend::simplicial_llt});

  /// Throws std::invalid_argument when a is not positive definite.
  CoarseEvaluation evaluate(const SymMat& a) const;

  /// Derivative of E(A, g) with respect to (a11, a12, a22) for the field u = u(A, g).
  Eigen::Vector3d energy_gradient(const Eigen::VectorXd& u) const;

  const TriMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  const ModeBasis& basis() const { return basis_; }

 private:
  MeshPtr mesh_;
  ModeBasis basis_;
  SolverOptions opts_;
};

CoarseEvaluation coarse_energies(const SymMat& a, const ModeBasis& basis, const MeshPtr& coarse);

struct MMatrix {
  Eigen::MatrixXd m;
  bool diagonal_only = false;  // no cross table: only the diagonal is known
  double symmetry_defect = 0.0;  // relative, before symmetrization
};

/// M_pq = 1/2 <phi_q, trace u_eps(phi_p) - trace u(A, phi_p)>, symmetrized.
MMatrix assemble_m(const Measurements& meas, const CoarseEvaluation& coarse);

struct PsiMax {
  double value = 0.0;      // mu^2
  double mu = 0.0;         // eigenvalue of largest modulus
  Eigen::VectorXd argmax;  // unit (or gram-unit) coefficient vector
};

PsiMax psi_max(const Eigen::MatrixXd& m);
/// Sup over c with c^T gram c = 1, for bases that are not orthonormal.
PsiMax psi_max(const Eigen::MatrixXd& m, const Eigen::MatrixXd& gram);

double psi_sigma(const Measurements& meas, const CoarseEvaluation& coarse);

enum class ObjectiveKind { psi_sigma, psi_max };
std::string to_string(ObjectiveKind k);
ObjectiveKind parse_objective(const std::string& name);

Eigen::Vector3d psi_sigma_gradient(const Measurements& meas, const CoarseEvaluation& coarse,
                                   const CoarseModel& model);
/// Gradient of psi_max through its argmax datum g = sum_p c_p phi_p.
Eigen::Vector3d psi_max_gradient(const Measurements& meas, const CoarseEvaluation& coarse, const CoarseModel& model,
                                 const PsiMax& pm);

/// Objective value at a; fills grad when non-null.
double objective(ObjectiveKind kind, const Measurements& meas, const CoarseModel& model, const SymMat& a,
                 Eigen::Vector3d* grad = nullptr);

struct OptimizerTrace {
  std::vector<SymMat> iterates;
  std::vector<double> objective_values;
  std::vector<double> step_sizes;
  std::vector<bool> positive_definite;
  Termination termination = Termination::max_iters;
  int evaluations = 0;

  const SymMat& final_matrix() const { return iterates.back(); }
  double final_value() const { return objective_values.back(); }
  int iterations() const { return static_cast<int>(step_sizes.size()); }
  bool monotone() const;
};

OptimizerTrace to_optimizer_trace(const DescentTrace& t);

/// Gradient descent over (a11, a12, a22); trial points that are not positive
/// definite are rejected by the line search.
OptimizerTrace descend(const Measurements& meas, const SymMat& init, ObjectiveKind kind, const CoarseModel& model,
                       const DescentOptions& opts = {});

// ---- baselines: boundary traces (MS) and volume fields (MV)

enum class FieldNorm { boundary, volume };

/// sup over unit g in V^P of |u_eps(g) - u(A, g)| in L2 of the boundary or
/// of the domain. Coarse fields are prolonged to the fine mesh.
class FieldMisfit {
 public:
  FieldMisfit(const Measurements& meas, const CoarseModel& model, FieldNorm norm);

  double value(const SymMat& a) const;
  /// Gram matrix of the differences over the modes.
  Eigen::MatrixXd difference_gram(const CoarseEvaluation& coarse) const;
  FieldNorm norm() const { return norm_; }

 private:
  const CoarseModel* model_;
  FieldNorm norm_;
  Eigen::MatrixXd mode_gram_;
  Eigen::MatrixXd fields_;  // fine, one column per mode
  SparseMatrix prolong_;    // coarse -> fine
  SparseMatrix weight_;     // fine mass matrix
};

double objective_ms(const SymMat& a, const Measurements& meas, const CoarseModel& model);
double objective_mv(const SymMat& a, const Measurements& meas, const CoarseModel& model);

/// Descent on a FieldMisfit with central-difference gradients (relative step fd_step).
OptimizerTrace descend_fields(const Measurements& meas, const SymMat& init, FieldNorm norm, const CoarseModel& model,
                              const DescentOptions& opts = {}, double fd_step = 1e-6);

// ---- ME = 1/2 MS on the full discrete boundary space

struct MeMsCheck {
  double psi_me = 0.0;         // 1/2 |mu| from the extreme Rayleigh quotient of H
  double psi_ms = 0.0;         // sqrt of the largest eigenvalue of H^2
  double psi_ms_direct = 0.0;  // |mu|
  double mu = 0.0;
  int operator_applications = 0;
};

/// H = T_eps - T_A, where T maps a zero-mean boundary datum to the trace of
/// the Neumann solution on `fine`.
MeMsCheck me_ms_identity_check(const CoefficientField& field, const SymMat& a, const MeshPtr& fine,
                               const SolverOptions& opts = {}, std::uint64_t seed = 7);

// ---- noise

/// energies[p] *= 1 + sigma eta_p with eta_p standard normal; the cross table is dropped.
Measurements apply_measurement_noise(const Measurements& meas, double sigma, std::uint64_t seed);

enum class NoiseDistribution { gaussian, uniform };

struct CoefficientNoise {
  double sigma = 0.0;
  int draws = 1;
  std::uint64_t seed = 0;
  NoiseDistribution distribution = NoiseDistribution::gaussian;  // uniform: entries on [-sigma, sigma]
  bool finite_difference = false;
};

/// sum_p (E(A_eps, phi_p) - mean_k E(A + eta_k, phi_p))^2 with a fixed
/// seeded family eta_k; a draw giving a non-SPD A + eta_k is replaced by
/// the next draw of its stream.
class CoefficientNoiseObjective {
 public:
  CoefficientNoiseObjective(const Measurements& meas, const CoarseModel& model, CoefficientNoise spec);

  /// Throws std::runtime_error when more than half of the drawn
  /// perturbations had to be rejected.
  double value(const SymMat& a, Eigen::Vector3d* grad = nullptr, int* rejections = nullptr) const;

 private:
  std::vector<SymMat> perturbations(const SymMat& a, int* rejections) const;

  const Measurements* meas_;
  const CoarseModel* model_;
  CoefficientNoise spec_;
};

OptimizerTrace descend_coefficient_noise(const Measurements& meas, const SymMat& init, const CoarseModel& model,
                                         const CoefficientNoise& spec, const DescentOptions& opts = {});

// ---- measurement files

void write_measurements(std::ostream& os, const Measurements& meas);
/// Reads energies (and an optional cross table); the mode basis is rebuilt
/// from its family, mesh size and count.
Measurements read_measurements(std::istream& is);

}  // namespace effid
