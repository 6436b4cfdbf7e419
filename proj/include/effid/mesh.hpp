#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <iosfwd>
#include <memory>
#include <vector>

namespace effid {

using Vec2 = Eigen::Vector2d;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct BoundaryEdge {
  int a = 0;  // start node (counter-clockwise loop)
  int b = 0;  // end node
  Vec2 normal = Vec2::Zero();
  double length = 0.0;
};

/// Structured P1 triangulation of (0,1)^2.
///
/// Node (i, j) sits at (i/n, j/n) and has index j*(n+1)+i. Every square cell
/// is cut along its lower-left to upper-right diagonal, so refining n by an
/// integer factor yields nested meshes. Boundary edges form one
/// counter-clockwise loop starting at the origin; boundary dof k is the start
/// node of edge k and sits at arc length k/n.
struct TriMesh {
  int n = 0;
  std::vector<Vec2> nodes;
  std::vector<std::array<int, 3>> triangles;
  std::vector<BoundaryEdge> boundary_edges;
  std::vector<int> boundary_nodes;   // loop order
  std::vector<int> boundary_index;   // node -> boundary dof, -1 for interior nodes
  double h = 0.0;                    // longest edge, sqrt(2)/n

  // Periodic cell meshes only.
  std::vector<int> periodic_partner;  // involution: node -> image under a lattice shift
  std::vector<int> periodic_dof;      // node -> independent dof
  int num_periodic_dofs = 0;

  bool is_periodic() const { return !periodic_partner.empty(); }
  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_triangles() const { return static_cast<int>(triangles.size()); }
  int num_boundary_dofs() const { return static_cast<int>(boundary_nodes.size()); }
  int node_index(int i, int j) const { return j * (n + 1) + i; }

  double triangle_area(int t) const;
  Vec2 barycenter(int t) const;
  /// Gradients of the three barycentric coordinates of triangle t.
  std::array<Vec2, 3> shape_gradients(int t) const;

  double total_area() const;
  double perimeter() const;

  /// Triangle containing p (points outside are clamped) and the barycentric
  /// weights of its three nodes, in the triangle's node order.
  std::pair<int, std::array<double, 3>> locate(const Vec2& p) const;
};

using MeshPtr = std::shared_ptr<const TriMesh>;

/// Unit-square mesh with (n+1)^2 nodes, 2n^2 triangles and 4n boundary edges.
TriMesh build_unit_square_mesh(int n);
MeshPtr make_unit_square_mesh(int n);

/// Periodic unit-cell mesh; the number of independent dofs is n^2.
TriMesh build_periodic_cell_mesh(int n);

/// Smallest n whose longest edge sqrt(2)/n does not exceed h.
int subdivisions_for_size(double h);

/// P1 mass matrix of the boundary loop over the continuous boundary dofs.
SparseMatrix boundary_mass_matrix(const TriMesh& mesh);

/// Consistent P1 mass matrix over all nodes.
SparseMatrix volume_mass_matrix(const TriMesh& mesh);

/// Permutation matrix of the periodic identification (involution).
SparseMatrix periodic_identification_matrix(const TriMesh& mesh);

/// Value of a nodal P1 field at p.
double evaluate_p1(const TriMesh& mesh, const Eigen::VectorXd& values, const Vec2& p);

/// Interpolates a nodal P1 field onto the nodes of another mesh. Exact when
/// `to` refines `from` by an integer factor.
Eigen::VectorXd interpolate_p1(const TriMesh& from, const Eigen::VectorXd& values,
                               const TriMesh& to);

/// Sparse matrix of interpolate_p1: rows are `to` nodes, columns `from` nodes.
SparseMatrix prolongation_matrix(const TriMesh& from, const TriMesh& to);

/// Same for boundary dofs of two unit-square meshes, by arc length.
SparseMatrix boundary_prolongation_matrix(const TriMesh& from, const TriMesh& to);

/// Restriction of nodal values to the boundary dofs, in loop order.
Eigen::VectorXd boundary_trace(const TriMesh& mesh, const Eigen::VectorXd& values);

/// Debug dump: "v index x y [value]" per node, then "t index a b c" per triangle.
void write_mesh(std::ostream& os, const TriMesh& mesh, const Eigen::VectorXd* values = nullptr);

}  // namespace effid
