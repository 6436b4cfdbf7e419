#include "effid/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

namespace effid {

namespace {

void fill_structured(TriMesh& m, int n) {
  m.n = n;
  m.h = std::sqrt(2.0) / n;
  m.nodes.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      m.nodes.emplace_back(static_cast<double>(i) / n, static_cast<double>(j) / n);

  m.triangles.reserve(2 * static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const int v00 = m.node_index(i, j);
      const int v10 = m.node_index(i + 1, j);
      const int v01 = m.node_index(i, j + 1);
      const int v11 = m.node_index(i + 1, j + 1);
      m.triangles.push_back({v00, v10, v11});
      m.triangles.push_back({v00, v11, v01});
    }
  }

  // Counter-clockwise loop: bottom, right, top, left.
  const double len = 1.0 / n;
  m.boundary_index.assign(m.nodes.size(), -1);
  auto push = [&](int a, int b, Vec2 normal) {
    m.boundary_index[a] = static_cast<int>(m.boundary_nodes.size());
    m.boundary_nodes.push_back(a);
    m.boundary_edges.push_back({a, b, normal, len});
  };
  for (int k = 0; k < n; ++k) push(m.node_index(k, 0), m.node_index(k + 1, 0), {0.0, -1.0});
  for (int k = 0; k < n; ++k) push(m.node_index(n, k), m.node_index(n, k + 1), {1.0, 0.0});
  for (int k = 0; k < n; ++k) push(m.node_index(n - k, n), m.node_index(n - k - 1, n), {0.0, 1.0});
  for (int k = 0; k < n; ++k) push(m.node_index(0, n - k), m.node_index(0, n - k - 1), {-1.0, 0.0});
}

}  // namespace

double TriMesh::triangle_area(int t) const {
  const auto& tri = triangles[t];
  const Vec2 e1 = nodes[tri[1]] - nodes[tri[0]];
  const Vec2 e2 = nodes[tri[2]] - nodes[tri[0]];
  return 0.5 * (e1.x() * e2.y() - e1.y() * e2.x());
}

Vec2 TriMesh::barycenter(int t) const {
  const auto& tri = triangles[t];
  return (nodes[tri[0]] + nodes[tri[1]] + nodes[tri[2]]) / 3.0;
}

std::array<Vec2, 3> TriMesh::shape_gradients(int t) const {
  const auto& tri = triangles[t];
  const Vec2& p0 = nodes[tri[0]];
  const Vec2& p1 = nodes[tri[1]];
  const Vec2& p2 = nodes[tri[2]];
  const double twice_area = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p1.y() - p0.y()) * (p2.x() - p0.x());
  // grad lambda_i = rot90(opposite edge) / (2|T|)
  return {Vec2(p1.y() - p2.y(), p2.x() - p1.x()) / twice_area,
          Vec2(p2.y() - p0.y(), p0.x() - p2.x()) / twice_area,
          Vec2(p0.y() - p1.y(), p1.x() - p0.x()) / twice_area};
}

double TriMesh::total_area() const {
  double a = 0.0;
  for (int t = 0; t < num_triangles(); ++t) a += triangle_area(t);
  return a;
}

double TriMesh::perimeter() const {
  double p = 0.0;
  for (const auto& e : boundary_edges) p += e.length;
  return p;
}

std::pair<int, std::array<double, 3>> TriMesh::locate(const Vec2& p) const {
  const double x = std::clamp(p.x(), 0.0, 1.0) * n;
  const double y = std::clamp(p.y(), 0.0, 1.0) * n;
  const int i = std::min(static_cast<int>(std::floor(x)), n - 1);
  const int j = std::min(static_cast<int>(std::floor(y)), n - 1);
  const double xi = x - i;
  const double eta = y - j;
  const int cell = j * n + i;
  if (xi >= eta) {
    // (v00, v10, v11)
    return {2 * cell, {1.0 - xi, xi - eta, eta}};
  }
  // (v00, v11, v01)
  return {2 * cell + 1, {1.0 - eta, xi, eta - xi}};
}

TriMesh build_unit_square_mesh(int n) {
  if (n < 1) throw std::invalid_argument("unit square mesh needs n >= 1, got " + std::to_string(n));
  TriMesh m;
  fill_structured(m, n);
  return m;
}

MeshPtr make_unit_square_mesh(int n) {
  return std::make_shared<const TriMesh>(build_unit_square_mesh(n));
}

TriMesh build_periodic_cell_mesh(int n) {
  if (n < 2) throw std::invalid_argument("periodic cell mesh needs n >= 2, got " + std::to_string(n));
  TriMesh m;
  fill_structured(m, n);
  const int num = m.num_nodes();
  m.periodic_partner.resize(num);
  m.periodic_dof.resize(num);
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const int v = m.node_index(i, j);
      // Opposite faces swap; corners pair along the diagonals.
      const int pi = i == 0 ? n : (i == n ? 0 : i);
      const int pj = j == 0 ? n : (j == n ? 0 : j);
      m.periodic_partner[v] = m.node_index(pi, pj);
      m.periodic_dof[v] = (j % n) * n + (i % n);
    }
  }
  m.num_periodic_dofs = n * n;
  return m;
}

int subdivisions_for_size(double h) {
  if (!(h > 0.0)) throw std::invalid_argument("mesh size must be positive");
  return std::max(1, static_cast<int>(std::ceil(std::sqrt(2.0) / h - 1e-9)));
}

SparseMatrix boundary_mass_matrix(const TriMesh& mesh) {
  const int nb = mesh.num_boundary_dofs();
  if (nb == 0) throw std::invalid_argument("mesh has no boundary edges");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(4 * static_cast<std::size_t>(nb));
  for (int k = 0; k < nb; ++k) {
    const auto& e = mesh.boundary_edges[k];
    const int a = k;
    const int b = (k + 1) % nb;
    const double c = e.length / 6.0;
    trip.emplace_back(a, a, 2.0 * c);
    trip.emplace_back(b, b, 2.0 * c);
    trip.emplace_back(a, b, c);
    trip.emplace_back(b, a, c);
  }
  SparseMatrix mb(nb, nb);
  mb.setFromTriplets(trip.begin(), trip.end());
  return mb;
}

SparseMatrix volume_mass_matrix(const TriMesh& mesh) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * static_cast<std::size_t>(mesh.num_triangles()));
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const double a = mesh.triangle_area(t);
    const auto& tri = mesh.triangles[t];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) trip.emplace_back(tri[i], tri[j], (i == j ? 2.0 : 1.0) * a / 12.0);
  }
  SparseMatrix m(mesh.num_nodes(), mesh.num_nodes());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

SparseMatrix periodic_identification_matrix(const TriMesh& mesh) {
  if (!mesh.is_periodic()) throw std::invalid_argument("mesh is not periodic");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.nodes.size());
  for (int v = 0; v < mesh.num_nodes(); ++v) trip.emplace_back(v, mesh.periodic_partner[v], 1.0);
  SparseMatrix p(mesh.num_nodes(), mesh.num_nodes());
  p.setFromTriplets(trip.begin(), trip.end());
  return p;
}

double evaluate_p1(const TriMesh& mesh, const Eigen::VectorXd& values, const Vec2& p) {
  const auto [t, w] = mesh.locate(p);
  const auto& tri = mesh.triangles[t];
  return w[0] * values[tri[0]] + w[1] * values[tri[1]] + w[2] * values[tri[2]];
}

Eigen::VectorXd interpolate_p1(const TriMesh& from, const Eigen::VectorXd& values, const TriMesh& to) {
  if (values.size() != from.num_nodes()) throw std::invalid_argument("interpolate_p1: size mismatch");
  Eigen::VectorXd out(to.num_nodes());
  for (int v = 0; v < to.num_nodes(); ++v) out[v] = evaluate_p1(from, values, to.nodes[v]);
  return out;
}

SparseMatrix prolongation_matrix(const TriMesh& from, const TriMesh& to) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(3 * static_cast<std::size_t>(to.num_nodes()));
  for (int v = 0; v < to.num_nodes(); ++v) {
    const auto [t, w] = from.locate(to.nodes[v]);
    for (int i = 0; i < 3; ++i)
      if (w[i] != 0.0) trip.emplace_back(v, from.triangles[t][i], w[i]);
  }
  SparseMatrix p(to.num_nodes(), from.num_nodes());
  p.setFromTriplets(trip.begin(), trip.end());
  return p;
}

SparseMatrix boundary_prolongation_matrix(const TriMesh& from, const TriMesh& to) {
  const int nf = from.num_boundary_dofs();
  const int nt = to.num_boundary_dofs();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(2 * static_cast<std::size_t>(nt));
  for (int k = 0; k < nt; ++k) {
    // Arc length in units of the source edges.
    const double s = static_cast<double>(k) * from.n / to.n;
    const int e = std::min(static_cast<int>(std::floor(s + 1e-12)), nf - 1);
    const double t = std::clamp(s - e, 0.0, 1.0);
    if (1.0 - t != 0.0) trip.emplace_back(k, e, 1.0 - t);
    if (t != 0.0) trip.emplace_back(k, (e + 1) % nf, t);
  }
  SparseMatrix p(nt, nf);
  p.setFromTriplets(trip.begin(), trip.end());
  return p;
}

Eigen::VectorXd boundary_trace(const TriMesh& mesh, const Eigen::VectorXd& values) {
  Eigen::VectorXd tr(mesh.num_boundary_dofs());
  for (int k = 0; k < mesh.num_boundary_dofs(); ++k) tr[k] = values[mesh.boundary_nodes[k]];
  return tr;
}

void write_mesh(std::ostream& os, const TriMesh& mesh, const Eigen::VectorXd* values) {
  for (int v = 0; v < mesh.num_nodes(); ++v) {
    os << "v " << v << ' ' << mesh.nodes[v].x() << ' ' << mesh.nodes[v].y();
    if (values) os << ' ' << (*values)[v];
    os << '\n';
  }
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    os << "t " << t << ' ' << tri[0] << ' ' << tri[1] << ' ' << tri[2] << '\n';
  }
}

}  // namespace effid
