#pragma once

#include "effid/mesh.hpp"
#include "effid/sym_mat.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace effid {

enum class FieldKind { constant, periodic_analytic, epsilon_scaled, checkerboard };

/// One realization of the two-phase random checkerboard a_rand(x/eps).
/// Cell (i, j) covers eps*([i,i+1) x [j,j+1)); values are stored row-major.
struct CheckerboardRealization {
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  int cells_per_side = 0;
  double epsilon = 1.0;
  std::vector<double> values;

  double value_at(const Vec2& x) const;
};

/// Point-to-matrix map A(x) with declared coercivity/boundedness constants.
/// Immutable; copies share the underlying evaluator.
class CoefficientField {
 public:
  using Evaluator = std::function<SymMat(const Vec2&)>;

  static CoefficientField constant(const SymMat& m);
  /// Z^2-periodic field given on the unit cell.
  static CoefficientField periodic(std::string name, Evaluator f, double alpha, double beta);
  /// a(y) Id with a 1-periodic profile a.
  static CoefficientField layered(std::string name, std::function<double(double)> a, double alpha,
                                  double beta);
  static CoefficientField from_checkerboard(std::shared_ptr<const CheckerboardRealization> r);

  SymMat operator()(const Vec2& x) const { return eval_(x); }

  FieldKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  /// Constant value (kind() == constant only).
  const SymMat& constant_value() const { return constant_; }
  const std::shared_ptr<const CheckerboardRealization>& realization() const { return realization_; }
  /// Constant, unscaled periodic fields: the ones a cell problem can use.
  bool is_cell_periodic() const {
    return kind_ == FieldKind::constant || kind_ == FieldKind::periodic_analytic;
  }

  friend CoefficientField scale_epsilon(const CoefficientField& field, double epsilon);

 private:
  FieldKind kind_ = FieldKind::constant;
  std::string name_;
  Evaluator eval_;
  double alpha_ = 0.0;
  double beta_ = 0.0;
  SymMat constant_;
  std::shared_ptr<const CheckerboardRealization> realization_;
};

/// The reference periodic field:
/// A11 = 22 + 10(sin 2 pi x + sin 2 pi y), A22 = 12 + 2(sin 2 pi x + sin 2 pi y), A12 = 0.
SymMat eval_periodic(const Vec2& p);
CoefficientField periodic_reference_field();

/// x -> field(x / epsilon).
CoefficientField scale_epsilon(const CoefficientField& field, double epsilon);

/// Number of eps-cells per side intersecting (0,1)^2.
int checkerboard_cells(double epsilon);

/// Seeded i.i.d. {4, 16} checkerboard realization; stream derived from (seed, index).
std::shared_ptr<const CheckerboardRealization> sample_checkerboard_realization(
    std::uint64_t seed, double epsilon, std::uint64_t index = 0);
CoefficientField sample_checkerboard(std::uint64_t seed, double epsilon, std::uint64_t index = 0);

/// Entrywise average over the unit cell by composite midpoint quadrature.
SymMat mean_over_cell(const CoefficientField& field, int points_per_side = 64);

}  // namespace effid
