#include "effid/identify.hpp"
#include "effid/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace effid;

namespace {

SymMat random_spd(SplitMix64& rng, double lo = 4.0, double hi = 30.0) {
  const double l1 = rng.uniform(lo, hi), l2 = rng.uniform(lo, hi), t = rng.uniform(0.0, 3.14159);
  const double c = std::cos(t), s = std::sin(t);
  return {l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c};
}

struct Fixture {
  MeshPtr coarse = make_unit_square_mesh(12);
  MeshPtr fine = make_unit_square_mesh(36);
  ModeBasis basis = compute_r_modes(coarse, 3);
  CoarseModel model{coarse, basis};
  Measurements meas = simulate_measurements(scale_epsilon(periodic_reference_field(), 0.25), fine, basis, true);
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("coarse energies of affine data") {
  const int n = 29;
  const MeshPtr mesh = make_unit_square_mesh(n);
  ModeBasis b;
  b.family = ModeFamily::affine;
  b.mesh_n = n;
  b.modes = {BoundaryFunction::normal_component(n, Vec2(1.0, 0.0)), BoundaryFunction::normal_component(n, Vec2(0.0, 1.0))};
  const CoarseEvaluation e = coarse_energies(SymMat::identity(), b, mesh);
  CHECK(std::abs(e.energies[0] + 0.5) <= 1e-6);
  CHECK(std::abs(e.energies[1] + 0.5) <= 1e-6);

  const ModeBasis r = compute_r_modes(mesh, 3);
  const CoarseEvaluation e1 = coarse_energies(SymMat::identity(), r, mesh);
  const CoarseEvaluation e7 = coarse_energies(SymMat::identity(7.0), r, mesh);
  for (int p = 0; p < 3; ++p) {
    CHECK(e1.energies[p] < 0.0);
    CHECK(std::abs(e7.energies[p] - e1.energies[p] / 7.0) <= 1e-12 * std::abs(e1.energies[p]));
  }
  CHECK_THROWS_AS(coarse_energies(SymMat{1.0, 2.0, 1.0}, r, mesh), std::invalid_argument);
}

TEST_CASE("simulated measurements are consistent") {
  const Fixture& f = fixture();
  const Eigen::MatrixXd& c = *f.meas.cross;
  CHECK((c - c.transpose()).norm() <= 1e-8 * c.norm());
  for (int p = 0; p < 3; ++p) {
    CHECK(f.meas.energies[p] < 0.0);
    CHECK(c(p, p) == doctest::Approx(-2.0 * f.meas.energies[p]).epsilon(1e-15));
  }
  CHECK(f.meas.has_traces());
  CHECK(f.meas.has_volume());
  CHECK(f.meas.truncated(2).cross->rows() == 2);
}

TEST_CASE("matrix M") {
  const Fixture& f = fixture();
  const SymMat a{18.0, 1.0, 12.0};
  const CoarseEvaluation e = f.model.evaluate(a);
  const MMatrix mm = assemble_m(f.meas, e);
  CHECK_FALSE(mm.diagonal_only);
  CHECK(mm.symmetry_defect <= 1e-8);
  for (int p = 0; p < 3; ++p) CHECK(std::abs(mm.m(p, p) + (f.meas.energies[p] - e.energies[p])) <= 1e-14);
  // psi_sigma is the sum of the squared diagonal of M.
  CHECK(psi_sigma(f.meas, e) == doctest::Approx(mm.m.diagonal().squaredNorm()).epsilon(1e-12));

  // Measurements generated by the coarse model itself give M = 0.
  Measurements self = f.meas;
  self.energies = e.energies;
  self.cross = e.cross;
  CHECK(assemble_m(self, e).m.cwiseAbs().maxCoeff() == 0.0);
  CHECK(psi_sigma(self, e) == 0.0);

  Measurements diag = f.meas;
  diag.cross.reset();
  const MMatrix md = assemble_m(diag, e);
  CHECK(md.diagonal_only);
  CHECK((md.m - Eigen::MatrixXd(mm.m.diagonal().asDiagonal())).norm() <= 1e-14);
}

TEST_CASE("psi_max eigen selection") {
  Eigen::MatrixXd m = Eigen::Vector3d(0.3, -0.5, 0.1).asDiagonal();
  PsiMax pm = psi_max(m);
  CHECK(pm.value == doctest::Approx(0.25));
  CHECK(pm.mu == doctest::Approx(-0.5));
  CHECK((pm.argmax - Eigen::Vector3d(0.0, 1.0, 0.0)).norm() <= 1e-14);

  pm = psi_max(Eigen::MatrixXd::Zero(3, 3));
  CHECK(pm.value == 0.0);
  CHECK((pm.argmax - Eigen::Vector3d(1.0, 0.0, 0.0)).norm() <= 1e-14);

  // Sampling oracle: any unit c gives (c^T M c)^2 <= value.
  SplitMix64 rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::MatrixXd r(4, 4);
    for (auto& x : r.reshaped()) x = rng.normal();
    const Eigen::MatrixXd s = 0.5 * (r + r.transpose());
    const PsiMax ref = psi_max(s);
    double best = 0.0;
    for (int k = 0; k < 100000; ++k) {
      Eigen::Vector4d c(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      c.normalize();
      best = std::max(best, std::pow(c.dot(s * c), 2));
    }
    CHECK(best <= ref.value + 1e-10);
    CHECK(best >= 0.98 * ref.value);
    CHECK(std::abs(ref.argmax.norm() - 1.0) <= 1e-12);
  }

  // Scaling M leaves the argmax unchanged.
  const Eigen::MatrixXd s = (Eigen::Matrix3d() << 1.0, 0.2, -0.3, 0.2, -2.0, 0.5, -0.3, 0.5, 0.7).finished();
  CHECK((psi_max(s).argmax - psi_max(3.7 * s).argmax).norm() <= 1e-12);

  // With a Gram matrix, the sup is over c^T G c = 1.
  const Eigen::Matrix3d g = (Eigen::Matrix3d() << 2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5).finished();
  const PsiMax pg = psi_max(s, g);
  CHECK(pg.argmax.dot(g * pg.argmax) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pg.value == doctest::Approx(std::pow(pg.argmax.dot(s * pg.argmax), 2)).epsilon(1e-12));
}

TEST_CASE("single mode: psi_sigma equals psi_max") {
  const Fixture& f = fixture();
  const Measurements one = f.meas.truncated(1);
  const CoarseModel model(f.coarse, f.basis.truncated(1));
  const SymMat a{20.0, -0.5, 11.0};
  CHECK(objective(ObjectiveKind::psi_sigma, one, model, a) ==
        doctest::Approx(objective(ObjectiveKind::psi_max, one, model, a)).epsilon(1e-12));
}

TEST_CASE("adjoint gradients match central differences") {
  const Fixture& f = fixture();
  SplitMix64 rng(11);
  for (const ObjectiveKind kind : {ObjectiveKind::psi_sigma, ObjectiveKind::psi_max}) {
    for (int trial = 0; trial < 4; ++trial) {
      const SymMat a = random_spd(rng, 8.0, 25.0);
      Eigen::Vector3d g;
      objective(kind, f.meas, f.model, a, &g);
      const Eigen::VectorXd fd = central_difference_gradient(
          [&](const Eigen::VectorXd& x) { return objective(kind, f.meas, f.model, SymMat::from_vec(x)); }, a.vec(),
          1e-4);
      CHECK((g - fd).norm() <= 1e-4 * fd.norm());
    }
  }
  const CoarseEvaluation e = f.model.evaluate(SymMat{15.0, 2.0, 9.0});
  for (int p = 0; p < 3; ++p) {
    const SymMat gram = gradient_gram(f.model.mesh(), e.fields.col(p));
    CHECK(gram.a11 >= 0.0);
    CHECK(gram.a22 >= 0.0);
  }
}

TEST_CASE("descent recovers a constant coefficient") {
  const Fixture& f = fixture();
  const SymMat a0{14.0, 2.5, 9.0};
  const Measurements exact = simulate_measurements(CoefficientField::constant(a0), f.coarse, f.basis);

  const OptimizerTrace at = descend(exact, a0, ObjectiveKind::psi_sigma, f.model);
  CHECK(at.iterations() == 0);
  CHECK(at.termination == Termination::gradient_small);
  CHECK(at.final_value() <= 1e-24);

  // Three energies can be matched by more than one matrix; five pin A0 down.
  const ModeBasis b5 = compute_r_modes(f.coarse, 5);
  const CoarseModel m5(f.coarse, b5);
  const Measurements exact5 = simulate_measurements(CoefficientField::constant(a0), f.coarse, b5);
  DescentOptions opts;
  opts.max_iterations = 1000;
  opts.gradient_rtol = 1e-10;
  SplitMix64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const SymMat init = random_spd(rng, 6.0, 25.0);
    const OptimizerTrace t = descend(exact5, init, ObjectiveKind::psi_sigma, m5, opts);
    CHECK(t.monotone());
    CHECK(t.final_value() <= 1e-12);
    CHECK((t.final_matrix() - a0).upper_norm() <= 1e-5 * a0.upper_norm());
    for (bool pd : t.positive_definite) CHECK(pd);
  }
  CHECK_THROWS_AS(descend(exact, SymMat{1.0, 3.0, 1.0}, ObjectiveKind::psi_sigma, f.model), std::invalid_argument);
}

TEST_CASE("MS and MV baselines") {
  const Fixture& f = fixture();
  const SymMat a0{14.0, 2.5, 9.0};
  const Measurements exact = simulate_measurements(CoefficientField::constant(a0), f.coarse, f.basis, true);
  CHECK(objective_ms(a0, exact, f.model) <= 1e-6 * objective_ms(SymMat{20.0, 0.0, 12.0}, exact, f.model));
  CHECK(objective_mv(a0, exact, f.model) <= 1e-6 * objective_mv(SymMat{20.0, 0.0, 12.0}, exact, f.model));

  // Single mode: the plain boundary norm of the trace difference.
  const SymMat a{19.0, 0.3, 11.5};
  const Measurements one = f.meas.truncated(1);
  const CoarseModel m1(f.coarse, f.basis.truncated(1));
  const Eigen::VectorXd coarse_trace = m1.evaluate(a).traces.col(0);
  const TriMesh fine = build_unit_square_mesh(f.meas.fine_n);
  const Eigen::VectorXd diff = one.boundary_traces.col(0) - boundary_prolongation_matrix(f.model.mesh(), fine) * coarse_trace;
  CHECK(objective_ms(a, one, m1) == doctest::Approx(std::sqrt(diff.dot(boundary_mass_matrix(fine) * diff))).epsilon(1e-10));

  // Rotating the basis leaves both values unchanged.
  SplitMix64 rng(8);
  Eigen::Matrix3d r;
  for (auto& x : r.reshaped()) x = rng.normal();
  const Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(r).householderQ();
  ModeBasis rotated = f.basis;
  for (int c = 0; c < 3; ++c) rotated.modes[c] = combine(f.basis.modes, q.col(c));
  rotated.eigenvalues.clear();
  const Measurements rm =
      simulate_measurements(scale_epsilon(periodic_reference_field(), 0.25), f.fine, rotated, true);
  const CoarseModel rmodel(f.coarse, rotated);
  CHECK(objective_ms(a, rm, rmodel) == doctest::Approx(objective_ms(a, f.meas, f.model)).epsilon(1e-10));
  CHECK(objective_mv(a, rm, rmodel) == doctest::Approx(objective_mv(a, f.meas, f.model)).epsilon(1e-10));

  Measurements bare = f.meas;
  bare.boundary_traces.resize(0, 0);
  CHECK_THROWS_AS(objective_ms(a, bare, f.model), std::invalid_argument);

  const OptimizerTrace t = descend_fields(exact, SymMat{20.0, 0.0, 12.0}, FieldNorm::boundary, f.model);
  CHECK(t.monotone());
  CHECK((t.final_matrix() - a0).upper_norm() <= 1e-4 * a0.upper_norm());
}

TEST_CASE("ME is half of MS on the full boundary space") {
  const MeshPtr mesh = make_unit_square_mesh(24);
  const CoefficientField field = scale_epsilon(periodic_reference_field(), 0.25);
  SplitMix64 rng(21);
  for (int trial = 0; trial < 2; ++trial) {
    const MeMsCheck c = me_ms_identity_check(field, random_spd(rng, 8.0, 25.0), mesh);
    CHECK(c.psi_me > 0.0);
    CHECK(std::abs(c.psi_ms - 2.0 * c.psi_me) <= 1e-6 * c.psi_ms);
    CHECK(std::abs(c.psi_ms - c.psi_ms_direct) <= 1e-8 * c.psi_ms);
  }
  const SymMat a0{5.0, 1.0, 3.0};
  const MeMsCheck zero = me_ms_identity_check(CoefficientField::constant(a0), a0, mesh);
  CHECK(zero.psi_me <= 1e-12);
  CHECK(zero.psi_ms <= 1e-12);
}

TEST_CASE("measurement noise") {
  const Fixture& f = fixture();
  CHECK(apply_measurement_noise(f.meas, 0.0, 4).energies == f.meas.energies);
  CHECK(apply_measurement_noise(f.meas, 0.1, 4).energies == apply_measurement_noise(f.meas, 0.1, 4).energies);
  CHECK_FALSE(apply_measurement_noise(f.meas, 0.1, 4).cross.has_value());
  double sum = 0.0;
  const int draws = 10000;
  const double sigma = 0.05;
  for (int s = 0; s < draws; ++s) {
    const Measurements noisy = apply_measurement_noise(f.meas, sigma, derive_seed(99, s));
    sum += (noisy.energies[0] / f.meas.energies[0] - 1.0) / sigma;
  }
  CHECK(std::abs(sum / draws) <= 0.03);
  CHECK_THROWS_AS(apply_measurement_noise(f.meas, -1.0, 0), std::invalid_argument);
}

TEST_CASE("coefficient noise objective") {
  const Fixture& f = fixture();
  const SymMat a{19.0, 0.5, 11.0};
  const CoefficientNoiseObjective none(f.meas, f.model, {0.0, 3, 1});
  CHECK(none.value(a) == doctest::Approx(psi_sigma(f.meas, f.model.evaluate(a))).epsilon(1e-14));

  const CoefficientNoiseObjective noisy(f.meas, f.model, {2.0, 6, 17});
  Eigen::Vector3d g;
  const double v = noisy.value(a, &g);
  CHECK(v == noisy.value(a));
  const Eigen::VectorXd fd = central_difference_gradient(
      [&](const Eigen::VectorXd& x) { return noisy.value(SymMat::from_vec(x)); }, a.vec(), 1e-4);
  CHECK((g - fd).norm() <= 1e-4 * fd.norm());

  const CoefficientNoiseObjective wild(f.meas, f.model, {50.0, 10, 3});
  CHECK_THROWS_AS(wild.value(SymMat::identity(0.1)), std::runtime_error);
}

TEST_CASE("measurement file round trip") {
  const Fixture& f = fixture();
  std::stringstream ss;
  write_measurements(ss, f.meas);
  const Measurements back = read_measurements(ss);
  CHECK(back.energies == f.meas.energies);
  CHECK(*back.cross == *f.meas.cross);
  CHECK(back.basis.mesh_n == 12);
  CHECK((nodal_values(back.basis) - nodal_values(f.basis)).cwiseAbs().maxCoeff() <= 1e-12);

  std::stringstream bad(R"({"schema_version": 1, "basis": {"family": "r_modes", "mesh_n": 12, "modes": 2},
                           "energies": [{"mode": 1, "energy": -0.1}]})");
  CHECK_THROWS_AS(read_measurements(bad), std::invalid_argument);
  std::stringstream garbage("not json");
  CHECK_THROWS_AS(read_measurements(garbage), std::invalid_argument);
}
