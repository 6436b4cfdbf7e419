#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <iosfwd>

namespace effid {

/// Constant symmetric 2x2 matrix stored through its three independent entries.
///
/// The vectorization (a11, a12, a22) is the parameter space of the
/// identification problem: gradients are taken with respect to these three
/// numbers, so the off-diagonal entry is counted once.
struct SymMat {
  double a11 = 0.0;
  double a12 = 0.0;
  double a22 = 0.0;

  static SymMat identity(double scale = 1.0) { return {scale, 0.0, scale}; }
  static SymMat diag(double d1, double d2) { return {d1, 0.0, d2}; }
  static SymMat from_vec(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
  static SymMat from_matrix(const Eigen::Matrix2d& m) {
    return {m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), m(1, 1)};
  }

  Eigen::Vector3d vec() const { return {a11, a12, a22}; }
  Eigen::Matrix2d matrix() const {
    Eigen::Matrix2d m;
    m << a11, a12, a12, a22;
    return m;
  }

  double trace() const { return a11 + a22; }
  double det() const { return a11 * a22 - a12 * a12; }

  /// Eigenvalues in ascending order.
  Eigen::Vector2d eigenvalues() const {
    const double mid = 0.5 * (a11 + a22);
    const double rad = std::hypot(0.5 * (a11 - a22), a12);
    return {mid - rad, mid + rad};
  }
  double min_eigenvalue() const { return eigenvalues()[0]; }
  double spectral_norm() const {
    const Eigen::Vector2d ev = eigenvalues();
    return std::max(std::abs(ev[0]), std::abs(ev[1]));
  }

  bool is_spd() const { return a11 > 0.0 && det() > 0.0; }
  /// Membership in S_{alpha,beta}: alpha-coercive and beta-bounded.
  bool in_bounds(double alpha, double beta) const {
    return min_eigenvalue() >= alpha && spectral_norm() <= beta;
  }

  /// sqrt(sum_{i<=j} B_ij^2), the matrix norm used by the error metrics.
  double upper_norm() const { return std::sqrt(a11 * a11 + a12 * a12 + a22 * a22); }
  double frobenius() const { return std::sqrt(a11 * a11 + 2.0 * a12 * a12 + a22 * a22); }

  SymMat inverse() const {
    const double d = det();
    return {a22 / d, -a12 / d, a11 / d};
  }
  Eigen::Vector2d apply(const Eigen::Vector2d& v) const {
    return {a11 * v[0] + a12 * v[1], a12 * v[0] + a22 * v[1]};
  }

  SymMat& operator+=(const SymMat& o) {
    a11 += o.a11;
    a12 += o.a12;
    a22 += o.a22;
    return *this;
  }
  SymMat& operator-=(const SymMat& o) {
    a11 -= o.a11;
    a12 -= o.a12;
    a22 -= o.a22;
    return *this;
  }
  SymMat& operator*=(double s) {
    a11 *= s;
    a12 *= s;
    a22 *= s;
    return *this;
  }
  friend SymMat operator+(SymMat a, const SymMat& b) { return a += b; }
  friend SymMat operator-(SymMat a, const SymMat& b) { return a -= b; }
  friend SymMat operator*(SymMat a, double s) { return a *= s; }
  friend SymMat operator*(double s, SymMat a) { return a *= s; }
  friend bool operator==(const SymMat&, const SymMat&) = default;
};

std::ostream& operator<<(std::ostream& os, const SymMat& m);

}  // namespace effid
