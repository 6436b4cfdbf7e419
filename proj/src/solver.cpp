#include "effid/solver.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#ifdef EFFID_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include <algorithm>
#include <cmath>
#include <mutex>
#include <new>
#include <stdexcept>
#include <string>

namespace effid {

LinearBackend parse_backend(const std::string& name) {
  if (name == "auto" || name == "automatic") return LinearBackend::automatic;
  if (name == "cholmod") return LinearBackend::cholmod;
  if (name == "simplicial_llt" || name == "llt") return LinearBackend::simplicial_llt;
  if (name == "cg" || name == "conjugate_gradient") return LinearBackend::conjugate_gradient;
  throw std::invalid_argument("unknown linear backend '" + name + "'");
}

std::string to_string(LinearBackend b) {
  switch (b) {
    case LinearBackend::automatic: return "auto";
    case LinearBackend::cholmod: return "cholmod";
    case LinearBackend::simplicial_llt: return "simplicial_llt";
    case LinearBackend::conjugate_gradient: return "cg";
  }
  return "unknown";
}

bool cholmod_available() {
#ifdef EFFID_HAVE_CHOLMOD
  return true;
#else
  return false;
#endif
}

// ---------------------------------------------------------------------------
// SpdFactorization

struct SpdFactorization::Impl {
  LinearBackend backend = LinearBackend::simplicial_llt;
  Eigen::Index n = 0;
  SolverOptions opts;
#ifdef EFFID_HAVE_CHOLMOD
  std::unique_ptr<Eigen::CholmodSupernodalLLT<SparseMatrix, Eigen::Lower>> cholmod;
  std::mutex cholmod_mutex;  // CHOLMOD keeps workspace in its common object
#endif
  std::unique_ptr<Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>> llt;
  SparseMatrix matrix;  // CG only
  std::unique_ptr<Eigen::IncompleteCholesky<double>> ichol;

  void factor_cholmod(const SparseMatrix& a) {
#ifdef EFFID_HAVE_CHOLMOD
    cholmod = std::make_unique<Eigen::CholmodSupernodalLLT<SparseMatrix, Eigen::Lower>>();
    cholmod->compute(a);
    if (cholmod->info() != Eigen::Success)
      throw std::runtime_error("sparse factorization failed: matrix is not positive definite");
    backend = LinearBackend::cholmod;
#else
    (void)a;
    throw std::runtime_error("built without CHOLMOD");
#endif
  }

  void factor_llt(const SparseMatrix& a) {
    llt = std::make_unique<Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>>();
    llt->compute(a);
    if (llt->info() != Eigen::Success)
      throw std::runtime_error("sparse factorization failed: matrix is not positive definite");
    backend = LinearBackend::simplicial_llt;
  }

  void prepare_cg(const SparseMatrix& a) {
    matrix = a;
    ichol = std::make_unique<Eigen::IncompleteCholesky<double>>();
    ichol->compute(matrix);
    if (ichol->info() != Eigen::Success) ichol.reset();
    backend = LinearBackend::conjugate_gradient;
  }

  Eigen::VectorXd cg(const Eigen::VectorXd& b) const {
    Eigen::VectorXd x;
    double err = 0.0;
    int iters = 0;
    if (ichol) {
      // Preconditioned CG written out so the incomplete factor can be reused.
      x = Eigen::VectorXd::Zero(b.size());
      Eigen::VectorXd r = b;
      const double bnorm = b.norm();
      if (bnorm == 0.0) return x;
      Eigen::VectorXd z = ichol->solve(r);
      Eigen::VectorXd p = z;
      double rz = r.dot(z);
      for (iters = 0; iters < opts.cg_max_iterations; ++iters) {
        const Eigen::VectorXd ap = matrix * p;
        const double alpha = rz / p.dot(ap);
        x += alpha * p;
        r -= alpha * ap;
        err = r.norm() / bnorm;
        if (err <= opts.cg_tolerance) return x;
        z = ichol->solve(r);
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
      }
    } else {
      Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper> solver;
      solver.setTolerance(opts.cg_tolerance);
      solver.setMaxIterations(opts.cg_max_iterations);
      solver.compute(matrix);
      x = solver.solve(b);
      err = solver.error();
      iters = static_cast<int>(solver.iterations());
      if (solver.info() == Eigen::Success) return x;
    }
    throw std::runtime_error("conjugate gradient did not converge after " + std::to_string(iters) +
                             " iterations (relative residual " + std::to_string(err) + ")");
  }
};

SpdFactorization::SpdFactorization(const SparseMatrix& a, const SolverOptions& opts)
    : impl_(std::make_unique<Impl>()) {
  if (a.rows() != a.cols()) throw std::invalid_argument("SpdFactorization: matrix is not square");
  impl_->n = a.rows();
  impl_->opts = opts;
  switch (opts.backend) {
    case LinearBackend::cholmod:
      impl_->factor_cholmod(a);
      break;
    case LinearBackend::simplicial_llt:
      impl_->factor_llt(a);
      break;
    case LinearBackend::conjugate_gradient:
      impl_->prepare_cg(a);
      break;
    case LinearBackend::automatic:
      try {
        if (cholmod_available())
          impl_->factor_cholmod(a);
        else
          impl_->factor_llt(a);
      } catch (const std::bad_alloc&) {
        impl_->prepare_cg(a);
      }
      break;
  }
}

SpdFactorization::~SpdFactorization() = default;
SpdFactorization::SpdFactorization(SpdFactorization&&) noexcept = default;
SpdFactorization& SpdFactorization::operator=(SpdFactorization&&) noexcept = default;

Eigen::VectorXd SpdFactorization::solve(const Eigen::VectorXd& b) const {
  if (b.size() != impl_->n) throw std::invalid_argument("SpdFactorization::solve: size mismatch");
  switch (impl_->backend) {
#ifdef EFFID_HAVE_CHOLMOD
    case LinearBackend::cholmod: {
      std::lock_guard<std::mutex> lock(impl_->cholmod_mutex);
      return impl_->cholmod->solve(b);
    }
#endif
    case LinearBackend::simplicial_llt:
      return impl_->llt->solve(b);
    case LinearBackend::conjugate_gradient:
      return impl_->cg(b);
    default:
      break;
  }
  throw std::logic_error("SpdFactorization: no backend");
}

Eigen::MatrixXd SpdFactorization::solve(const Eigen::MatrixXd& b) const {
  if (b.rows() != impl_->n) throw std::invalid_argument("SpdFactorization::solve: size mismatch");
#ifdef EFFID_HAVE_CHOLMOD
  if (impl_->backend == LinearBackend::cholmod) {
    std::lock_guard<std::mutex> lock(impl_->cholmod_mutex);
    return impl_->cholmod->solve(b);
  }
#endif
  if (impl_->backend == LinearBackend::simplicial_llt) return impl_->llt->solve(b);
  Eigen::MatrixXd x(b.rows(), b.cols());
  for (Eigen::Index c = 0; c < b.cols(); ++c) x.col(c) = solve(Eigen::VectorXd(b.col(c)));
  return x;
}

LinearBackend SpdFactorization::backend() const { return impl_->backend; }
Eigen::Index SpdFactorization::rows() const { return impl_->n; }

// ---------------------------------------------------------------------------
// BoundaryFunction

BoundaryFunction::BoundaryFunction(int n, Eigen::VectorXd edge_values) : n_(n), values_(std::move(edge_values)) {
  if (n < 1) throw std::invalid_argument("BoundaryFunction: n must be positive");
  if (values_.size() != 8 * n) throw std::invalid_argument("BoundaryFunction: expected 8n edge values");
}

BoundaryFunction BoundaryFunction::zero(int n) { return {n, Eigen::VectorXd::Zero(8 * n)}; }

BoundaryFunction BoundaryFunction::from_nodal(int n, const Eigen::VectorXd& nodal) {
  const int nb = 4 * n;
  if (nodal.size() != nb) throw std::invalid_argument("from_nodal: expected 4n boundary values");
  Eigen::VectorXd v(2 * nb);
  for (int k = 0; k < nb; ++k) {
    v[2 * k] = nodal[k];
    v[2 * k + 1] = nodal[(k + 1) % nb];
  }
  return {n, std::move(v)};
}

BoundaryFunction BoundaryFunction::normal_component(int n, const Vec2& e) {
  static const Vec2 normals[4] = {{0.0, -1.0}, {1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}};
  Eigen::VectorXd v(8 * n);
  for (int k = 0; k < 4 * n; ++k) v[2 * k] = v[2 * k + 1] = e.dot(normals[k / n]);
  return {n, std::move(v)};
}

double BoundaryFunction::value_on_edge(int edge, double s) const {
  const double t = std::clamp(s * n_ - edge, 0.0, 1.0);
  return (1.0 - t) * values_[2 * edge] + t * values_[2 * edge + 1];
}

double BoundaryFunction::integral() const { return 0.5 * edge_length() * values_.sum(); }

double BoundaryFunction::inner(const BoundaryFunction& o) const {
  if (o.n_ != n_) throw std::invalid_argument("BoundaryFunction::inner: mesh mismatch");
  double s = 0.0;
  for (int k = 0; k < num_edges(); ++k) {
    const double fa = values_[2 * k], fb = values_[2 * k + 1];
    const double ga = o.values_[2 * k], gb = o.values_[2 * k + 1];
    s += 2.0 * fa * ga + fa * gb + fb * ga + 2.0 * fb * gb;
  }
  return s * edge_length() / 6.0;
}

double BoundaryFunction::norm() const { return std::sqrt(std::max(0.0, inner(*this))); }

double BoundaryFunction::inner_trace(const Eigen::VectorXd& trace) const { return load().dot(trace); }

Eigen::VectorXd BoundaryFunction::load() const {
  const int nb = num_edges();
  const double c = edge_length() / 6.0;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(nb);
  for (int k = 0; k < nb; ++k) {
    const double ga = values_[2 * k], gb = values_[2 * k + 1];
    b[k] += c * (2.0 * ga + gb);
    b[(k + 1) % nb] += c * (ga + 2.0 * gb);
  }
  return b;
}

BoundaryFunction BoundaryFunction::zero_mean() const {
  BoundaryFunction f = *this;
  f.values_.array() -= integral() / 4.0;
  return f;
}

BoundaryFunction BoundaryFunction::normalized() const {
  const double nrm = norm();
  if (nrm == 0.0) throw std::invalid_argument("cannot normalize the zero boundary function");
  return *this * (1.0 / nrm);
}

BoundaryFunction BoundaryFunction::transfer(int m) const {
  if (m == n_) return *this;
  if (m < 1) throw std::invalid_argument("BoundaryFunction::transfer: m must be positive");
  Eigen::VectorXd v(8 * m);
  for (int k = 0; k < 4 * m; ++k) {
    const double s0 = static_cast<double>(k) / m;
    const double s1 = static_cast<double>(k + 1) / m;
    // Start value from the source edge right of s0, end value from the one left of s1.
    const int a = std::clamp(static_cast<int>(std::floor(s0 * n_ + 1e-9)), 0, num_edges() - 1);
    const int b = std::clamp(static_cast<int>(std::ceil(s1 * n_ - 1e-9)) - 1, 0, num_edges() - 1);
    v[2 * k] = value_on_edge(a, s0);
    v[2 * k + 1] = value_on_edge(b, s1);
  }
  return {m, std::move(v)};
}

BoundaryFunction& BoundaryFunction::operator+=(const BoundaryFunction& o) {
  if (values_.size() == 0) return *this = o;
  if (o.n_ != n_) throw std::invalid_argument("BoundaryFunction: mesh mismatch");
  values_ += o.values_;
  return *this;
}

BoundaryFunction& BoundaryFunction::operator*=(double s) {
  values_ *= s;
  return *this;
}

BoundaryFunction combine(const std::vector<BoundaryFunction>& f, const Eigen::VectorXd& c) {
  if (f.empty() || static_cast<Eigen::Index>(f.size()) != c.size())
    throw std::invalid_argument("combine: size mismatch");
  BoundaryFunction out = BoundaryFunction::zero(f.front().n());
  for (std::size_t p = 0; p < f.size(); ++p) out += f[p] * c[static_cast<Eigen::Index>(p)];
  return out;
}

// ---------------------------------------------------------------------------
// Assembly

namespace {

std::vector<SymMat> sample_at_barycenters(const TriMesh& mesh, const CoefficientField& field) {
  std::vector<SymMat> a(mesh.num_triangles());
  if (field.kind() == FieldKind::constant) {
    std::fill(a.begin(), a.end(), field.constant_value());
  } else {
    for (int t = 0; t < mesh.num_triangles(); ++t) a[t] = field(mesh.barycenter(t));
  }
  return a;
}

template <class Map>
SparseMatrix assemble(const TriMesh& mesh, const std::vector<SymMat>& a, int size, Map&& dof) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * static_cast<std::size_t>(mesh.num_triangles()));
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto g = mesh.shape_gradients(t);
    const double area = mesh.triangle_area(t);
    const auto& tri = mesh.triangles[t];
    for (int i = 0; i < 3; ++i) {
      const Eigen::Vector2d ag = a[t].apply(g[i]);
      for (int j = 0; j < 3; ++j) trip.emplace_back(dof(tri[i]), dof(tri[j]), area * ag.dot(g[j]));
    }
  }
  SparseMatrix k(size, size);
  k.setFromTriplets(trip.begin(), trip.end());
  k.makeCompressed();
  return k;
}

// Adding K00 to the (0,0) entry makes the singular Neumann matrix definite
// without changing solutions of compatible systems: summing the equations
// forces u_0 = 0.
SparseMatrix pinned(SparseMatrix k) {
  k.coeffRef(0, 0) *= 2.0;
  return k;
}

}  // namespace

SparseMatrix assemble_stiffness(const TriMesh& mesh, const CoefficientField& field) {
  return assemble(mesh, sample_at_barycenters(mesh, field), mesh.num_nodes(), [](int v) { return v; });
}

// ---------------------------------------------------------------------------
// NeumannSolver

NeumannSolver::NeumannSolver(MeshPtr mesh, const CoefficientField& field, const SolverOptions& opts)
    : mesh_(std::move(mesh)),
      stiffness_(assemble_stiffness(*mesh_, field)),
      factor_(pinned(stiffness_), opts),
      perimeter_(mesh_->perimeter()) {}

Eigen::VectorXd NeumannSolver::rhs(const BoundaryFunction& g) const {
  if (g.n() != mesh_->n) throw std::invalid_argument("boundary datum belongs to a different mesh");
  const double integral = g.integral();
  if (std::abs(integral) > 1e-10 * g.norm())
    throw std::invalid_argument("Neumann datum has nonzero boundary integral " + std::to_string(integral));
  const Eigen::VectorXd gb = g.zero_mean().load();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(mesh_->num_nodes());
  for (int k = 0; k < mesh_->num_boundary_dofs(); ++k) b[mesh_->boundary_nodes[k]] = gb[k];
  return b;
}

NeumannSolution NeumannSolver::solve(const BoundaryFunction& g) const {
  return std::move(solve_all({g}).front());
}

std::vector<NeumannSolution> NeumannSolver::solve_all(const std::vector<BoundaryFunction>& g) const {
  std::vector<NeumannSolution> out;
  if (g.empty()) return out;
  Eigen::MatrixXd b(mesh_->num_nodes(), static_cast<Eigen::Index>(g.size()));
  for (std::size_t p = 0; p < g.size(); ++p) b.col(static_cast<Eigen::Index>(p)) = rhs(g[p]);
  const Eigen::MatrixXd x = factor_.solve(b);
  // Shift to zero boundary mean: c = M_b * 1 holds the boundary weights.
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(mesh_->num_nodes());
  for (const auto& e : mesh_->boundary_edges) {
    weights[e.a] += 0.5 * e.length;
    weights[e.b] += 0.5 * e.length;
  }
  out.reserve(g.size());
  for (std::size_t p = 0; p < g.size(); ++p) {
    NeumannSolution s;
    s.values = x.col(static_cast<Eigen::Index>(p));
    s.values.array() -= weights.dot(s.values) / perimeter_;
    s.datum = g[p];
    s.mesh_n = mesh_->n;
    out.push_back(std::move(s));
  }
  return out;
}

double NeumannSolver::residual(const NeumannSolution& u) const {
  const Eigen::VectorXd b = rhs(u.datum);
  const double scale = std::max(b.norm(), 1e-300);
  return (stiffness_ * u.values - b).norm() / scale;
}

NeumannSolution solve_neumann(const MeshPtr& mesh, const CoefficientField& field, const BoundaryFunction& g) {
  return NeumannSolver(mesh, field).solve(g);
}

double energy(const TriMesh& mesh, const BoundaryFunction& g, const NeumannSolution& u) {
  if (g.n() != mesh.n || u.mesh_n != mesh.n || u.values.size() != mesh.num_nodes())
    throw std::invalid_argument("energy: mesh mismatch");
  return -0.5 * g.inner_trace(boundary_trace(mesh, u.values));
}

SymMat gradient_cross_gram(const TriMesh& mesh, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != mesh.num_nodes() || v.size() != mesh.num_nodes())
    throw std::invalid_argument("gradient_gram: size mismatch");
  SymMat g;
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto sg = mesh.shape_gradients(t);
    const auto& tri = mesh.triangles[t];
    const Vec2 gu = u[tri[0]] * sg[0] + u[tri[1]] * sg[1] + u[tri[2]] * sg[2];
    const Vec2 gv = v[tri[0]] * sg[0] + v[tri[1]] * sg[1] + v[tri[2]] * sg[2];
    const double a = mesh.triangle_area(t);
    g.a11 += a * gu.x() * gv.x();
    g.a12 += a * 0.5 * (gu.x() * gv.y() + gu.y() * gv.x());
    g.a22 += a * gu.y() * gv.y();
  }
  return g;
}

SymMat gradient_gram(const TriMesh& mesh, const Eigen::VectorXd& u) { return gradient_cross_gram(mesh, u, u); }

// ---------------------------------------------------------------------------
// Correctors

Eigen::VectorXd CorrectorSolution::nodal(const TriMesh& cell) const {
  Eigen::VectorXd out(cell.num_nodes());
  for (int v = 0; v < cell.num_nodes(); ++v) out[v] = values[cell.periodic_dof[v]];
  return out;
}

namespace {

SparseMatrix reduced_cell_matrix(const TriMesh& mesh, const std::vector<SymMat>& a) {
  if (!mesh.is_periodic()) throw std::invalid_argument("corrector solve needs a periodic cell mesh");
  return assemble(mesh, a, mesh.num_periodic_dofs, [&mesh](int v) { return mesh.periodic_dof[v]; });
}

}  // namespace

CorrectorSolver::CorrectorSolver(MeshPtr cell_mesh, const CoefficientField& field, const SolverOptions& opts)
    : mesh_(std::move(cell_mesh)),
      field_(field),
      cell_values_(field.is_cell_periodic()
                       ? sample_at_barycenters(*mesh_, field)
                       : throw std::invalid_argument("corrector needs a constant or unscaled periodic field")),
      reduced_(reduced_cell_matrix(*mesh_, cell_values_)),
      factor_(pinned(reduced_), opts) {}

CorrectorSolution CorrectorSolver::solve(const Vec2& p) const {
  const TriMesh& m = *mesh_;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m.num_periodic_dofs);
  for (int t = 0; t < m.num_triangles(); ++t) {
    const auto g = m.shape_gradients(t);
    const Vec2 flux = cell_values_[t].apply(p) * m.triangle_area(t);
    const auto& tri = m.triangles[t];
    for (int i = 0; i < 3; ++i) b[m.periodic_dof[tri[i]]] -= flux.dot(g[i]);
  }
  CorrectorSolution s;
  s.direction = p;
  s.values = factor_.solve(b);
  // Every periodic dof carries the same P1 mass h^2 on the uniform cell mesh.
  s.values.array() -= s.values.mean();
  return s;
}

CorrectorSolution solve_corrector(const MeshPtr& cell_mesh, const CoefficientField& field, const Vec2& p) {
  return CorrectorSolver(cell_mesh, field).solve(p);
}

}  // namespace effid
