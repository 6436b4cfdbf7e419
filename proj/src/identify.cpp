#include "effid/identify.hpp"

#include "effid/lanczos.hpp"
#include "effid/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace effid {

namespace {

Eigen::MatrixXd cross_table(const std::vector<BoundaryFunction>& modes, const Eigen::MatrixXd& traces) {
  const int p = static_cast<int>(modes.size());
  Eigen::MatrixXd c(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) c(i, j) = modes[j].inner_trace(traces.col(i));
  return c;
}

void fix_sign(Eigen::VectorXd& v) {
  const double top = v.cwiseAbs().maxCoeff();
  if (top == 0.0) return;
  Eigen::Index arg = 0;
  while (std::abs(v[arg]) < (1.0 - 1e-6) * top) ++arg;
  if (v[arg] < 0.0) v = -v;
}

PsiMax select_extreme(const Eigen::VectorXd& values, const Eigen::MatrixXd& vectors) {
  const double top = values.cwiseAbs().maxCoeff();
  Eigen::Index i = 0;
  while (std::abs(values[i]) < top - 1e-12 * top) ++i;
  PsiMax out;
  out.mu = values[i];
  out.value = out.mu * out.mu;
  out.argmax = vectors.col(i);
  fix_sign(out.argmax);
  return out;
}

Eigen::Vector3d to_vec(const Eigen::VectorXd& x) { return {x[0], x[1], x[2]}; }

double frobenius_of(const Eigen::VectorXd& x) { return SymMat::from_vec(to_vec(x)).frobenius(); }

bool spd_point(const Eigen::VectorXd& x) { return SymMat::from_vec(to_vec(x)).is_spd(); }

}  // namespace

Measurements Measurements::truncated(int p) const {
  if (p < 1 || p > size()) throw std::invalid_argument("Measurements::truncated: bad size");
  Measurements out = *this;
  out.basis = basis.truncated(p);
  out.energies = energies.head(p);
  if (cross) out.cross = cross->topLeftCorner(p, p);
  if (has_traces()) out.boundary_traces = boundary_traces.leftCols(p);
  if (has_volume()) out.volume_fields = volume_fields.leftCols(p);
  return out;
}

Measurements simulate_measurements(const CoefficientField& field, const MeshPtr& fine, const ModeBasis& basis,
                                   bool keep_fields, const SolverOptions& opts) {
  if (basis.size() == 0) throw std::invalid_argument("simulate_measurements: empty basis");
  if (fine->n % basis.mesh_n != 0)
    throw std::invalid_argument("simulate_measurements: fine mesh must refine the basis mesh");
  const ModeBasis fb = basis.transfer(fine->n);
  const NeumannSolver solver(fine, field, opts);
  const auto u = solver.solve_all(fb.modes);

  const int p = basis.size();
  Eigen::MatrixXd traces(fine->num_boundary_dofs(), p);
  for (int i = 0; i < p; ++i) traces.col(i) = u[i].trace(*fine);

  Measurements m;
  m.basis = basis;
  m.fine_n = fine->n;
  m.field_name = field.name();
  m.cross = cross_table(fb.modes, traces);
  m.energies = -0.5 * m.cross->diagonal();
  if (keep_fields) {
    m.boundary_traces = traces;
    m.volume_fields.resize(fine->num_nodes(), p);
    for (int i = 0; i < p; ++i) m.volume_fields.col(i) = u[i].values;
  }
  if (field.kind() == FieldKind::checkerboard) m.seed = field.realization()->seed;
  return m;
}

Measurements average_measurements(const std::vector<Measurements>& runs) {
  if (runs.empty()) throw std::invalid_argument("average_measurements: no runs");
  Measurements out = runs.front();
  const double w = 1.0 / static_cast<double>(runs.size());
  bool cross = out.cross.has_value(), traces = out.has_traces(), volume = out.has_volume();
  for (std::size_t k = 1; k < runs.size(); ++k) {
    const Measurements& r = runs[k];
    if (r.size() != out.size() || r.fine_n != out.fine_n)
      throw std::invalid_argument("average_measurements: incompatible runs");
    out.energies += r.energies;
    cross = cross && r.cross.has_value();
    if (cross) *out.cross += *r.cross;
    traces = traces && r.has_traces();
    if (traces) out.boundary_traces += r.boundary_traces;
    volume = volume && r.has_volume();
    if (volume) out.volume_fields += r.volume_fields;
  }
  out.energies *= w;
  if (cross) *out.cross *= w;
  else out.cross.reset();
  if (traces) out.boundary_traces *= w;
  else out.boundary_traces.resize(0, 0);
  if (volume) out.volume_fields *= w;
  else out.volume_fields.resize(0, 0);
  out.realizations = static_cast<int>(runs.size());
  return out;
}

CoarseModel::CoarseModel(MeshPtr coarse, ModeBasis basis, const SolverOptions& opts)
    : mesh_(std::move(coarse)), basis_(std::move(basis)), opts_(opts) {
  if (basis_.mesh_n != mesh_->n) throw std::invalid_argument("CoarseModel: basis lives on another mesh");
}

CoarseEvaluation CoarseModel::evaluate(const SymMat& a) const {
  if (!a.is_spd()) throw std::invalid_argument("coarse_energies: matrix is not positive definite");
  const NeumannSolver solver(mesh_, CoefficientField::constant(a), opts_);
  const auto u = solver.solve_all(basis_.modes);
  const int p = basis_.size();
  CoarseEvaluation e;
  e.a = a;
  e.fields.resize(mesh_->num_nodes(), p);
  e.traces.resize(mesh_->num_boundary_dofs(), p);
  for (int i = 0; i < p; ++i) {
    e.fields.col(i) = u[i].values;
    e.traces.col(i) = u[i].trace(*mesh_);
  }
  e.cross = cross_table(basis_.modes, e.traces);
  e.energies = -0.5 * e.cross.diagonal();
  return e;
}

Eigen::Vector3d CoarseModel::energy_gradient(const Eigen::VectorXd& u) const {
  const SymMat g = gradient_gram(*mesh_, u);
  return {0.5 * g.a11, g.a12, 0.5 * g.a22};
}

CoarseEvaluation coarse_energies(const SymMat& a, const ModeBasis& basis, const MeshPtr& coarse) {
  return CoarseModel(coarse, basis).evaluate(a);
}

MMatrix assemble_m(const Measurements& meas, const CoarseEvaluation& coarse) {
  if (meas.size() != coarse.energies.size()) throw std::invalid_argument("assemble_m: size mismatch");
  MMatrix out;
  if (!meas.cross) {
    out.diagonal_only = true;
    out.m = (coarse.energies - meas.energies).asDiagonal();
    return out;
  }
  const Eigen::MatrixXd raw = 0.5 * (*meas.cross - coarse.cross);
  const double scale = 0.5 * (meas.cross->norm() + coarse.cross.norm());
  out.symmetry_defect = scale > 0.0 ? (raw - raw.transpose()).norm() / scale : 0.0;
  out.m = 0.5 * (raw + raw.transpose());
  return out;
}

PsiMax psi_max(const Eigen::MatrixXd& m) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return select_extreme(es.eigenvalues(), es.eigenvectors());
}

PsiMax psi_max(const Eigen::MatrixXd& m, const Eigen::MatrixXd& gram) {
  const Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(m, gram);
  return select_extreme(es.eigenvalues(), es.eigenvectors());
}

double psi_sigma(const Measurements& meas, const CoarseEvaluation& coarse) {
  return (meas.energies - coarse.energies).squaredNorm();
}

std::string to_string(ObjectiveKind k) { return k == ObjectiveKind::psi_max ? "psi_max" : "psi_sigma"; }

ObjectiveKind parse_objective(const std::string& name) {
  if (name == "psi_sigma") return ObjectiveKind::psi_sigma;
  if (name == "psi_max") return ObjectiveKind::psi_max;
  throw std::invalid_argument("unknown objective '" + name + "'");
}

Eigen::Vector3d psi_sigma_gradient(const Measurements& meas, const CoarseEvaluation& coarse,
                                   const CoarseModel& model) {
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  for (int p = 0; p < meas.size(); ++p) {
    const double r = meas.energies[p] - coarse.energies[p];
    if (r != 0.0) g -= 2.0 * r * model.energy_gradient(coarse.fields.col(p));
  }
  return g;
}

Eigen::Vector3d psi_max_gradient(const Measurements&, const CoarseEvaluation& coarse, const CoarseModel& model,
                                 const PsiMax& pm) {
  // mu = E(A, g) - E(A_eps, g) for g = sum_p c_p phi_p, and dmu = dE(A, g).
  if (pm.mu == 0.0) return Eigen::Vector3d::Zero();
  const Eigen::VectorXd u = coarse.fields * pm.argmax;
  return 2.0 * pm.mu * model.energy_gradient(u);
}

double objective(ObjectiveKind kind, const Measurements& meas, const CoarseModel& model, const SymMat& a,
                 Eigen::Vector3d* grad) {
  const CoarseEvaluation e = model.evaluate(a);
  if (kind == ObjectiveKind::psi_max) {
    const MMatrix mm = assemble_m(meas, e);
    if (!mm.diagonal_only) {
      const PsiMax pm = model.basis().family == ModeFamily::affine ? psi_max(mm.m, model.basis().gram())
                                                                   : psi_max(mm.m);
      if (grad) *grad = psi_max_gradient(meas, e, model, pm);
      return pm.value;
    }
  }
  if (grad) *grad = psi_sigma_gradient(meas, e, model);
  return psi_sigma(meas, e);
}

bool OptimizerTrace::monotone() const {
  for (std::size_t k = 1; k < objective_values.size(); ++k)
    if (objective_values[k] > objective_values[k - 1]) return false;
  return true;
}

OptimizerTrace to_optimizer_trace(const DescentTrace& t) {
  OptimizerTrace out;
  for (const auto& x : t.iterates) {
    out.iterates.push_back(SymMat::from_vec(to_vec(x)));
    out.positive_definite.push_back(out.iterates.back().is_spd());
  }
  out.objective_values = t.values;
  out.step_sizes = t.steps;
  out.termination = t.termination;
  out.evaluations = t.evaluations;
  return out;
}

OptimizerTrace descend(const Measurements& meas, const SymMat& init, ObjectiveKind kind, const CoarseModel& model,
                       const DescentOptions& opts) {
  if (!init.is_spd()) throw std::invalid_argument("descend: initial matrix is not positive definite");
  const ScalarObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    Eigen::Vector3d gr;
    const double v = objective(kind, meas, model, SymMat::from_vec(to_vec(x)), g ? &gr : nullptr);
    if (g) *g = gr;
    return v;
  };
  return to_optimizer_trace(gradient_descent(f, init.vec(), opts, spd_point, frobenius_of));
}

FieldMisfit::FieldMisfit(const Measurements& meas, const CoarseModel& model, FieldNorm norm)
    : model_(&model), norm_(norm), mode_gram_(model.basis().gram()) {
  if (meas.size() != model.basis().size()) throw std::invalid_argument("FieldMisfit: size mismatch");
  const bool boundary = norm == FieldNorm::boundary;
  if (boundary ? !meas.has_traces() : !meas.has_volume())
    throw std::invalid_argument(boundary ? "objective_ms: measurements carry no boundary traces"
                                         : "objective_mv: measurements carry no volume fields");
  const TriMesh fine = build_unit_square_mesh(meas.fine_n);
  fields_ = boundary ? meas.boundary_traces : meas.volume_fields;
  prolong_ = boundary ? boundary_prolongation_matrix(model.mesh(), fine) : prolongation_matrix(model.mesh(), fine);
  weight_ = boundary ? boundary_mass_matrix(fine) : volume_mass_matrix(fine);
}

Eigen::MatrixXd FieldMisfit::difference_gram(const CoarseEvaluation& coarse) const {
  const Eigen::MatrixXd& u = norm_ == FieldNorm::boundary ? coarse.traces : coarse.fields;
  const Eigen::MatrixXd diff = fields_ - prolong_ * u;
  const Eigen::MatrixXd d = diff.transpose() * (weight_ * diff);
  return 0.5 * (d + d.transpose());
}

double FieldMisfit::value(const SymMat& a) const {
  const Eigen::MatrixXd d = difference_gram(model_->evaluate(a));
  const Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(d, mode_gram_, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

double objective_ms(const SymMat& a, const Measurements& meas, const CoarseModel& model) {
  return FieldMisfit(meas, model, FieldNorm::boundary).value(a);
}

double objective_mv(const SymMat& a, const Measurements& meas, const CoarseModel& model) {
  return FieldMisfit(meas, model, FieldNorm::volume).value(a);
}

OptimizerTrace descend_fields(const Measurements& meas, const SymMat& init, FieldNorm norm, const CoarseModel& model,
                              const DescentOptions& opts, double fd_step) {
  if (!init.is_spd()) throw std::invalid_argument("descend_fields: initial matrix is not positive definite");
  const FieldMisfit misfit(meas, model, norm);
  const auto value = [&](const Eigen::VectorXd& x) { return misfit.value(SymMat::from_vec(to_vec(x))); };
  const ScalarObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = central_difference_gradient(value, x, fd_step * frobenius_of(x));
    return value(x);
  };
  return to_optimizer_trace(gradient_descent(f, init.vec(), opts, spd_point, frobenius_of));
}

MeMsCheck me_ms_identity_check(const CoefficientField& field, const SymMat& a, const MeshPtr& fine,
                               const SolverOptions& opts, std::uint64_t seed) {
  const NeumannSolver se(fine, field, opts);
  const NeumannSolver sa(fine, CoefficientField::constant(a), opts);
  const int n = fine->n;
  const int nb = fine->num_boundary_dofs();
  const SparseMatrix mass = boundary_mass_matrix(*fine);

  MeMsCheck out;
  const BlockOperator h = [&](const Eigen::MatrixXd& x) {
    std::vector<BoundaryFunction> g;
    for (Eigen::Index c = 0; c < x.cols(); ++c) g.push_back(BoundaryFunction::from_nodal(n, x.col(c)).zero_mean());
    const auto ue = se.solve_all(g);
    const auto ua = sa.solve_all(g);
    Eigen::MatrixXd y(nb, x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) y.col(c) = ue[c].trace(*fine) - ua[c].trace(*fine);
    out.operator_applications += static_cast<int>(x.cols());
    return y;
  };
  const BlockOperator m = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return mass * x; };
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(nb);
  const Eigen::MatrixXd constant = one / std::sqrt(one.dot(mass * one));

  EigenOptions eo;
  eo.seed = seed;
  eo.tol = 1e-11;
  eo.which = SpectrumEnd::largest_magnitude;
  const EigenResult r1 = block_krylov_eigs(h, m, constant, nb, 1, eo);
  eo.which = SpectrumEnd::largest_algebraic;
  const EigenResult r2 = block_krylov_eigs([&](const Eigen::MatrixXd& x) { return h(h(x)); }, m, constant, nb, 1, eo);
  if (!r1.converged || !r2.converged) throw std::runtime_error("me_ms_identity_check: eigensolver did not converge");

  out.mu = r1.values[0];
  out.psi_me = 0.5 * std::abs(out.mu);
  out.psi_ms_direct = std::abs(out.mu);
  out.psi_ms = std::sqrt(std::max(0.0, r2.values[0]));
  return out;
}

Measurements apply_measurement_noise(const Measurements& meas, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("apply_measurement_noise: sigma must be nonnegative");
  Measurements out = meas;
  SplitMix64 rng(seed);
  for (int p = 0; p < out.size(); ++p) out.energies[p] *= 1.0 + sigma * rng.normal();
  out.cross.reset();
  return out;
}

CoefficientNoiseObjective::CoefficientNoiseObjective(const Measurements& meas, const CoarseModel& model,
                                                     CoefficientNoise spec)
    : meas_(&meas), model_(&model), spec_(spec) {
  if (!(spec.sigma >= 0.0)) throw std::invalid_argument("coefficient noise: sigma must be nonnegative");
  if (spec.draws < 1) throw std::invalid_argument("coefficient noise: need at least one draw");
}

std::vector<SymMat> CoefficientNoiseObjective::perturbations(const SymMat& a, int* rejections) const {
  std::vector<SymMat> out;
  int rejected = 0;
  for (int k = 0; k < spec_.draws; ++k) {
    SplitMix64 rng(derive_seed(spec_.seed, static_cast<std::uint64_t>(k)));
    const auto draw = [&] {
      return spec_.distribution == NoiseDistribution::gaussian ? spec_.sigma * rng.normal()
                                                               : spec_.sigma * rng.uniform(-1.0, 1.0);
    };
    for (;;) {
      const double e11 = draw(), e12 = draw(), e22 = draw();
      const SymMat b = a + SymMat{e11, e12, e22};
      if (b.is_spd()) {
        out.push_back(b);
        break;
      }
      if (++rejected > spec_.draws)
        throw std::runtime_error("coefficient noise: more than half of the perturbations are not positive definite");
    }
  }
  if (rejections) *rejections = rejected;
  return out;
}

double CoefficientNoiseObjective::value(const SymMat& a, Eigen::Vector3d* grad, int* rejections) const {
  const std::vector<SymMat> shifted = perturbations(a, rejections);
  const double w = 1.0 / static_cast<double>(shifted.size());
  const int p = meas_->size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  std::vector<CoarseEvaluation> evals;
  evals.reserve(shifted.size());
  for (const SymMat& b : shifted) {
    evals.push_back(model_->evaluate(b));
    mean += w * evals.back().energies;
  }
  const Eigen::VectorXd r = meas_->energies - mean;
  if (grad) {
    grad->setZero();
    for (const auto& e : evals)
      for (int i = 0; i < p; ++i) *grad -= 2.0 * w * r[i] * model_->energy_gradient(e.fields.col(i));
  }
  return r.squaredNorm();
}

OptimizerTrace descend_coefficient_noise(const Measurements& meas, const SymMat& init, const CoarseModel& model,
                                         const CoefficientNoise& spec, const DescentOptions& opts) {
  if (!init.is_spd()) throw std::invalid_argument("descend_coefficient_noise: initial matrix is not positive definite");
  const CoefficientNoiseObjective obj(meas, model, spec);
  const auto value = [&](const Eigen::VectorXd& x) { return obj.value(SymMat::from_vec(to_vec(x))); };
  const ScalarObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (!g) return value(x);
    if (spec.finite_difference) {
      *g = central_difference_gradient(value, x, 1e-6 * frobenius_of(x));
      return value(x);
    }
    Eigen::Vector3d gr;
    const double v = obj.value(SymMat::from_vec(to_vec(x)), &gr);
    *g = gr;
    return v;
  };
  return to_optimizer_trace(gradient_descent(f, init.vec(), opts, spd_point, frobenius_of));
}

void write_measurements(std::ostream& os, const Measurements& meas) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["basis"] = {{"family", to_string(meas.basis.family)}, {"mesh_n", meas.basis.mesh_n}, {"modes", meas.size()}};
  j["provenance"] = meas.provenance == Provenance::injected ? "injected" : "simulated";
  j["field"] = meas.field_name;
  j["seed"] = meas.seed;
  j["fine_n"] = meas.fine_n;
  j["realizations"] = meas.realizations;
  nlohmann::json records = nlohmann::json::array();
  for (int p = 0; p < meas.size(); ++p) records.push_back({{"mode", p + 1}, {"energy", meas.energies[p]}});
  j["energies"] = records;
  if (meas.cross) {
    nlohmann::json rows = nlohmann::json::array();
    for (int p = 0; p < meas.size(); ++p) {
      std::vector<double> row(meas.size());
      for (int q = 0; q < meas.size(); ++q) row[q] = (*meas.cross)(p, q);
      rows.push_back(row);
    }
    j["cross"] = rows;
  }
  os << j.dump(2) << '\n';
}

Measurements read_measurements(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("measurements: ") + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != 1) throw std::invalid_argument("measurements: unsupported schema_version");
    const auto& b = j.at("basis");
    const std::string family = b.at("family").get<std::string>();
    const int mesh_n = b.at("mesh_n").get<int>();
    const int p = b.at("modes").get<int>();

    Measurements m;
    if (family == "r_modes") m.basis = compute_r_modes(make_unit_square_mesh(mesh_n), p);
    else if (family == "affine") m.basis = affine_modes(mesh_n).truncated(p);
    else throw std::invalid_argument("measurements: unknown basis family '" + family + "'");

    m.energies = Eigen::VectorXd::Constant(p, std::nan(""));
    for (const auto& rec : j.at("energies")) {
      const int k = rec.at("mode").get<int>();
      if (k < 1 || k > p) throw std::invalid_argument("measurements: mode index out of range");
      if (!std::isnan(m.energies[k - 1])) throw std::invalid_argument("measurements: duplicate mode index");
      m.energies[k - 1] = rec.at("energy").get<double>();
    }
    if (m.energies.hasNaN()) throw std::invalid_argument("measurements: missing mode energies");
    if (j.contains("cross")) {
      Eigen::MatrixXd c(p, p);
      const auto& rows = j.at("cross");
      if (static_cast<int>(rows.size()) != p) throw std::invalid_argument("measurements: cross table has wrong size");
      for (int r = 0; r < p; ++r) {
        if (static_cast<int>(rows[r].size()) != p)
          throw std::invalid_argument("measurements: cross table has wrong size");
        for (int q = 0; q < p; ++q) c(r, q) = rows[r][q].get<double>();
      }
      m.cross = c;
    }
    m.provenance = j.value("provenance", std::string("injected")) == "simulated" ? Provenance::simulated
                                                                                   : Provenance::injected;
    m.field_name = j.value("field", std::string());
    m.seed = j.value("seed", std::uint64_t{0});
    m.fine_n = j.value("fine_n", 0);
    m.realizations = j.value("realizations", 1);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("measurements: ") + e.what());
  }
}

}  // namespace effid
