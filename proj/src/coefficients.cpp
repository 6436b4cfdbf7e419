#include "effid/coefficients.hpp"

#include "effid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace effid {

double CheckerboardRealization::value_at(const Vec2& x) const {
  const int last = cells_per_side - 1;
  const int i = std::clamp(static_cast<int>(std::floor(x.x() / epsilon)), 0, last);
  const int j = std::clamp(static_cast<int>(std::floor(x.y() / epsilon)), 0, last);
  return values[static_cast<std::size_t>(j) * cells_per_side + i];
}

CoefficientField CoefficientField::constant(const SymMat& m) {
  if (!m.is_spd()) throw std::invalid_argument("constant coefficient must be positive definite");
  CoefficientField f;
  f.kind_ = FieldKind::constant;
  f.name_ = "constant";
  f.constant_ = m;
  f.eval_ = [m](const Vec2&) { return m; };
  f.alpha_ = m.min_eigenvalue();
  f.beta_ = m.spectral_norm();
  return f;
}

CoefficientField CoefficientField::periodic(std::string name, Evaluator e, double alpha, double beta) {
  CoefficientField f;
  f.kind_ = FieldKind::periodic_analytic;
  f.name_ = std::move(name);
  f.eval_ = std::move(e);
  f.alpha_ = alpha;
  f.beta_ = beta;
  return f;
}

CoefficientField CoefficientField::layered(std::string name, std::function<double(double)> a,
                                           double alpha, double beta) {
  return periodic(std::move(name), [a = std::move(a)](const Vec2& x) { return SymMat::identity(a(x.y())); },
                  alpha, beta);
}

CoefficientField CoefficientField::from_checkerboard(std::shared_ptr<const CheckerboardRealization> r) {
  CoefficientField f;
  f.kind_ = FieldKind::checkerboard;
  f.name_ = "checkerboard";
  f.realization_ = r;
  f.eval_ = [r](const Vec2& x) { return SymMat::identity(r->value_at(x)); };
  f.alpha_ = 4.0;
  f.beta_ = 16.0;
  return f;
}

SymMat eval_periodic(const Vec2& p) {
  const double s = std::sin(2.0 * std::numbers::pi * p.x()) + std::sin(2.0 * std::numbers::pi * p.y());
  return SymMat::diag(22.0 + 10.0 * s, 12.0 + 2.0 * s);
}

CoefficientField periodic_reference_field() {
  return CoefficientField::periodic("periodic_paper", eval_periodic, 2.0, 42.0);
}

CoefficientField scale_epsilon(const CoefficientField& field, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (field.kind_ == FieldKind::constant) return field;
  CoefficientField f = field;
  f.kind_ = FieldKind::epsilon_scaled;
  f.eval_ = [inner = field.eval_, epsilon](const Vec2& x) { return inner(x / epsilon); };
  return f;
}

int checkerboard_cells(double epsilon) {
  if (!(epsilon > 0.0) || epsilon > 1.0) throw std::invalid_argument("checkerboard needs 0 < epsilon <= 1");
  return std::max(1, static_cast<int>(std::ceil(1.0 / epsilon - 1e-9)));
}

std::shared_ptr<const CheckerboardRealization> sample_checkerboard_realization(std::uint64_t seed,
                                                                               double epsilon,
                                                                               std::uint64_t index) {
  auto r = std::make_shared<CheckerboardRealization>();
  r->seed = seed;
  r->index = index;
  r->epsilon = epsilon;
  r->cells_per_side = checkerboard_cells(epsilon);
  SplitMix64 gen(derive_seed(seed, index));
  r->values.resize(static_cast<std::size_t>(r->cells_per_side) * r->cells_per_side);
  for (double& v : r->values) v = gen.bernoulli() ? 16.0 : 4.0;
  return r;
}

CoefficientField sample_checkerboard(std::uint64_t seed, double epsilon, std::uint64_t index) {
  return CoefficientField::from_checkerboard(sample_checkerboard_realization(seed, epsilon, index));
}

SymMat mean_over_cell(const CoefficientField& field, int points_per_side) {
  if (!field.is_cell_periodic())
    throw std::invalid_argument("mean_over_cell needs a constant or unscaled periodic field");
  if (points_per_side < 1) throw std::invalid_argument("mean_over_cell needs at least one point");
  SymMat sum;
  const double w = 1.0 / points_per_side;
  for (int j = 0; j < points_per_side; ++j)
    for (int i = 0; i < points_per_side; ++i) sum += field(Vec2((i + 0.5) * w, (j + 0.5) * w));
  return sum * (w * w);
}

}  // namespace effid
