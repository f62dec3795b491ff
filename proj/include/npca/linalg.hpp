#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "npca/matrix.hpp"

namespace npca {

struct SvdResult {
  Matrix u;                   // rows x cols, thin
  std::vector<double> sigma;  // length cols, non-increasing
  Matrix vt;                  // cols x cols
};

/*
 One-sided Jacobi SVD. Columns of a working copy W = A are orthogonalized by
 plane rotations applied from the right; V accumulates the rotations, so
 W = A V with W^T W diagonal at convergence. Singular values are the final
 column norms. Cyclic (p, q) sweeps in fixed order keep the result
 deterministic for a given input. Convergence when every off-diagonal Gram
 entry |w_p . w_q| drops below 1e-12 * ||A||_F^2; at most 60 sweeps.
*/
inline SvdResult svd_full(const Matrix& a) {
  const int m = a.rows(), n = a.cols();
  if (m < n) throw std::invalid_argument("svd_full: requires rows >= cols");
  if (!a.is_finite()) throw std::invalid_argument("svd_full: non-finite input");

  Matrix w = a;
  Matrix v = Matrix::identity(n);
  const double fn = a.fnorm();
  const double thresh = 1e-12 * fn * fn;

  bool converged = (fn == 0.0);
  for (int sweep = 0; sweep < 60 && !converged; ++sweep) {
    converged = true;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          app += wp * wp;
          aqq += wq * wq;
          apq += wp * wq;
        }
        if (std::fabs(apq) <= thresh) continue;
        converged = false;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (int i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = cs * wp - sn * wq;
          w(i, q) = sn * wp + cs * wq;
        }
        for (int i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = cs * vp - sn * vq;
          v(i, q) = sn * vp + cs * vq;
        }
      }
    }
  }
  if (!converged) throw std::runtime_error("svd_full: Jacobi sweeps did not converge");

  std::vector<double> sig(n);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    sig[j] = std::sqrt(s);
  }

  // sort singular values descending, stable in the original column order
  std::vector<int> order(n);
  for (int j = 0; j < n; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return sig[x] > sig[y]; });

  SvdResult r;
  r.u = Matrix(m, n);
  r.vt = Matrix(n, n);
  r.sigma.resize(n);
  for (int j = 0; j < n; ++j) {
    const int src = order[j];
    r.sigma[j] = sig[src];
    const double inv = sig[src] > 0.0 ? 1.0 / sig[src] : 0.0;
    for (int i = 0; i < m; ++i) r.u(i, j) = w(i, src) * inv;
    for (int i = 0; i < n; ++i) r.vt(j, i) = v(i, src);
  }
  return r;
}

// determinant by LU with partial pivoting
inline double determinant(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("determinant: matrix not square");
  const int n = a.rows();
  Matrix lu = a;
  double det = 1.0;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int i = k + 1; i < n; ++i)
      if (std::fabs(lu(i, k)) > std::fabs(lu(piv, k))) piv = i;
    if (lu(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
      det = -det;
    }
    det *= lu(k, k);
    for (int i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      for (int j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
    }
  }
  return det;
}

// Rotation extraction for the PCA layer: flip each right-singular column so
// its largest-magnitude entry is positive (first such entry on ties), then if
// det(V) = -1 negate the column tied to the smallest singular value
// (smallest index among ties) so the result lands in SO(n).
inline Matrix pca_rotation(const SvdResult& s) {
  const int n = s.vt.rows();
  Matrix v = s.vt.t();
  for (int j = 0; j < n; ++j) {
    int arg = 0;
    double best = std::fabs(v(0, j));
    for (int i = 1; i < n; ++i) {
      const double m = std::fabs(v(i, j));
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    if (v(arg, j) < 0.0)
      for (int i = 0; i < n; ++i) v(i, j) = -v(i, j);
  }
  if (determinant(v) < 0.0) {
    int flip = n - 1;
    const double smin = s.sigma[n - 1];
    const double tol = 1e-12 * (s.sigma.empty() ? 0.0 : s.sigma[0]);
    for (int j = 0; j < n; ++j) {
      if (s.sigma[j] <= smin + tol) {
        flip = j;
        break;
      }
    }
    for (int i = 0; i < n; ++i) v(i, flip) = -v(i, flip);
  }
  return v;
}

// Orthogonal projection of a square matrix onto SO(n): the rotation closest
// in Frobenius norm. With SVD(vbar) = Q diag(lambda) P^T the unconstrained
// optimum is Q P^T; when det(Q P^T) = -1 the singular direction with the
// smallest lambda (smallest index among ties) is negated to stay inside
// SO(n). `degenerate` is set when that flip is ambiguous (tied smallest
// singular values) and the tie-break was applied.
inline Matrix project_to_son(const Matrix& vbar, bool* degenerate = nullptr) {
  if (vbar.rows() != vbar.cols()) throw std::invalid_argument("project_to_son: matrix not square");
  if (!vbar.is_finite()) throw std::invalid_argument("project_to_son: non-finite input");
  const int n = vbar.rows();
  if (degenerate) *degenerate = false;

  SvdResult s = svd_full(vbar);
  Matrix r = matmul(s.u, s.vt);  // Q P^T
  if (determinant(r) < 0.0) {
    const double smin = s.sigma[n - 1];
    const double tol = 1e-9 * std::max(s.sigma[0], 1.0);
    int flip = n - 1;
    int tied = 0;
    for (int j = 0; j < n; ++j) {
      if (s.sigma[j] <= smin + tol) {
        if (tied == 0) flip = j;
        ++tied;
      }
    }
    if (tied > 1 && degenerate) *degenerate = true;
    // recompose with the flipped singular direction: Q D P^T
    Matrix d = Matrix::identity(n);
    d(flip, flip) = -1.0;
    r = matmul(matmul(s.u, d), s.vt);
  }
  // Newton polar step R <- R (3I - R^T R) / 2 to polish orthogonality down to
  // machine precision; keeps the projection idempotent
  for (int it = 0; it < 2; ++it) {
    Matrix gram = matmul_tn(r, r);
    Matrix corr = Matrix::identity(n) * 3.0 - gram;
    r = matmul(r, corr) * 0.5;
  }
  return r;
}

// Product of Householder reflections H_1 H_2 ... H_k with
// H_i = I - 2 v_i v_i^T / ||v_i||^2. Each vector must have norm > 1e-12.
inline Matrix householder_product(const std::vector<std::vector<double>>& vs) {
  if (vs.empty()) throw std::invalid_argument("householder_product: no vectors");
  const int n = static_cast<int>(vs[0].size());
  Matrix r = Matrix::identity(n);
  for (const auto& v : vs) {
    if (static_cast<int>(v.size()) != n) throw std::invalid_argument("householder_product: vector length mismatch");
    double nsq = 0.0;
    for (double x : v) nsq += x * x;
    if (std::sqrt(nsq) <= 1e-12) throw std::runtime_error("householder_product: degenerate reflection (near-zero vector)");
    // R <- R H = R - (2/||v||^2) (R v) v^T
    std::vector<double> rv(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const double* row = r.row_ptr(i);
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += row[j] * v[j];
      rv[i] = s;
    }
    const double f = 2.0 / nsq;
    for (int i = 0; i < n; ++i) {
      double* row = r.row_ptr(i);
      const double c = f * rv[i];
      for (int j = 0; j < n; ++j) row[j] -= c * v[j];
    }
  }
  if (!r.is_finite()) throw std::runtime_error("householder_product: non-finite result");
  return r;
}

// Haar-uniform rotation from SO(n) via QR of a Gaussian matrix.
inline Matrix random_rotation(int n, Rng& rng) {
  Matrix g = Matrix::gaussian(n, n, rng);
  // Gram-Schmidt with sign fixed by the R diagonal
  Matrix q(n, n);
  for (int j = 0; j < n; ++j) {
    std::vector<double> col(n);
    for (int i = 0; i < n; ++i) col[i] = g(i, j);
    for (int k = 0; k < j; ++k) {
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += q(i, k) * col[i];
      for (int i = 0; i < n; ++i) col[i] -= dot * q(i, k);
    }
    double norm = 0.0;
    for (double x : col) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) return random_rotation(n, rng);  // retry on a degenerate draw
    for (int i = 0; i < n; ++i) q(i, j) = col[i] / norm;
  }
  if (determinant(q) < 0.0)
    for (int i = 0; i < n; ++i) q(i, 0) = -q(i, 0);
  return q;
}

// planar rotation by theta
inline Matrix rotation2d(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return Matrix{{c, -s}, {s, c}};
}

}  // namespace npca
