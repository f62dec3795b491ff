#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "npca/linalg.hpp"
#include "npca/matrix.hpp"
#include "npca/model.hpp"
#include "npca/rng.hpp"

namespace npca::test {

inline double rel_err(double got, double want) {
  const double denom = std::max(std::fabs(want), 1e-300);
  return std::fabs(got - want) / denom;
}

// central finite differences of a scalar function w.r.t. one matrix argument
inline Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (int i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double fp = f(x);
    x.data()[i] = orig - h;
    const double fm = f(x);
    x.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// finite-difference Jacobian of a per-sample map R^n -> R^n applied to a
// single row, and its log|det|
inline double fd_logdet(const std::function<Matrix(const Matrix&)>& map, const Matrix& row, double h = 1e-6) {
  const int n = row.cols();
  Matrix jac(n, n);
  for (int j = 0; j < n; ++j) {
    Matrix xp = row, xm = row;
    xp(0, j) += h;
    xm(0, j) -= h;
    Matrix fp = map(xp), fm = map(xm);
    for (int i = 0; i < n; ++i) jac(i, j) = (fp(0, i) - fm(0, i)) / (2.0 * h);
  }
  return std::log(std::fabs(determinant(jac)));
}

/*
 Independent eigenvalue oracle for symmetric 3x3 matrices: closed-form roots
 of the characteristic cubic (trigonometric form). Used to cross-check the
 Jacobi SVD through sqrt(eig(X^T X)).
*/
inline std::array<double, 3> symmetric3_eigenvalues(const Matrix& a) {
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  if (p1 == 0.0) {
    std::array<double, 3> e = {a(0, 0), a(1, 1), a(2, 2)};
    std::sort(e.begin(), e.end(), std::greater<double>());
    return e;
  }
  const double q = (a(0, 0) + a(1, 1) + a(2, 2)) / 3.0;
  const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) + (a(2, 2) - q) * (a(2, 2) - q) +
                    2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  Matrix b = a;
  for (int i = 0; i < 3; ++i) b(i, i) -= q;
  b *= 1.0 / p;
  double r = determinant(b) / 2.0;
  r = std::max(-1.0, std::min(1.0, r));
  const double phi = std::acos(r) / 3.0;
  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * 3.14159265358979323846 / 3.0);
  const double e2 = 3.0 * q - e1 - e3;
  std::array<double, 3> e = {e1, e2, e3};
  std::sort(e.begin(), e.end(), std::greater<double>());
  return e;
}

// Haar-uniform SO(3) sample via a random unit quaternion; independent of the
// QR-based generator in the library
inline Matrix random_so3_quaternion(Rng& rng) {
  double q[4];
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& c : q) {
      c = rng.normal();
      norm += c * c;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (double& c : q) c /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return Matrix{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
}

// grid-search oracle: the planar rotation closest to a 2x2 matrix
inline double closest_rotation_angle_grid(const Matrix& m, int grid = 1000000) {
  double best_angle = 0.0, best = 1e300;
  for (int k = 0; k < grid; ++k) {
    const double theta = -3.14159265358979323846 + 2.0 * 3.14159265358979323846 * k / grid;
    const double c = std::cos(theta), s = std::sin(theta);
    const double d00 = m(0, 0) - c, d01 = m(0, 1) + s, d10 = m(1, 0) - s, d11 = m(1, 1) - c;
    const double dist = d00 * d00 + d01 * d01 + d10 * d10 + d11 * d11;
    if (dist < best) {
      best = dist;
      best_angle = theta;
    }
  }
  return best_angle;
}

// randomize every parameter so coupling layers are no longer the identity
inline void perturb_params(Model& m, std::uint64_t seed, double scale = 0.4) {
  Rng rng(seed);
  for (Matrix* p : m.params())
    for (auto& v : p->data()) v += scale * rng.normal();
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace npca::test
