#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "npca/autodiff.hpp"
#include "npca/matrix.hpp"
#include "npca/rng.hpp"

namespace npca {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

enum class BaseKind { IG, NIG };

// Diagonal Gaussian base density with a non-increasing per-dimension scale.
// IG fixes every scale to 1.
struct BaseDensity {
  BaseKind kind = BaseKind::IG;
  std::vector<double> sigmas;

  static BaseDensity isotropic(int n) {
    BaseDensity d;
    d.kind = BaseKind::IG;
    d.sigmas.assign(n, 1.0);
    return d;
  }

  static BaseDensity non_isotropic(std::vector<double> s) {
    BaseDensity d;
    d.kind = BaseKind::NIG;
    d.sigmas = std::move(s);
    for (std::size_t i = 0; i < d.sigmas.size(); ++i) {
      if (d.sigmas[i] <= 0.0) throw std::invalid_argument("BaseDensity: sigma must be > 0");
      if (i > 0 && d.sigmas[i] > d.sigmas[i - 1] + 1e-15)
        throw std::invalid_argument("BaseDensity: sigmas must be non-increasing");
    }
    return d;
  }

  int dim() const { return static_cast<int>(sigmas.size()); }
};

// sigma_i linearly interpolated from sigma_max down to sigma_min
inline std::vector<double> sigma_schedule(int n, double sigma_max, double sigma_min) {
  if (!(sigma_max >= sigma_min) || sigma_min <= 0.0)
    throw std::invalid_argument("sigma_schedule: need sigma_max >= sigma_min > 0");
  std::vector<double> s(n);
  if (n == 1) {
    s[0] = sigma_max;
    return s;
  }
  const double step = (sigma_max - sigma_min) / (n - 1);
  for (int i = 0; i < n; ++i) s[i] = sigma_max - step * i;
  s[n - 1] = sigma_min;
  return s;
}

// per-sample log density: -1/2 sum z_i^2/sigma_i^2 - sum log sigma_i - n/2 log 2pi
inline std::vector<double> log_prob(const BaseDensity& d, const Matrix& z) {
  const int n = d.dim();
  if (z.cols() != n) throw std::invalid_argument("log_prob: dimension mismatch");
  double constant = -0.5 * n * kLog2Pi;
  for (double s : d.sigmas) constant -= std::log(s);
  std::vector<double> out(z.rows());
  for (int i = 0; i < z.rows(); ++i) {
    const double* row = z.row_ptr(i);
    double q = 0.0;
    for (int j = 0; j < n; ++j) {
      const double w = row[j] / d.sigmas[j];
      q += w * w;
    }
    out[i] = -0.5 * q + constant;
  }
  return out;
}

// tape version, returns a B x 1 Var of per-sample log densities
inline Var log_prob_ad(Tape& tape, const BaseDensity& d, Var z) {
  const int n = d.dim();
  if (z.cols != n) throw std::invalid_argument("log_prob_ad: dimension mismatch");
  Matrix inv_var(1, n);
  double constant = -0.5 * n * kLog2Pi;
  for (int j = 0; j < n; ++j) {
    inv_var(0, j) = 1.0 / (d.sigmas[j] * d.sigmas[j]);
    constant -= std::log(d.sigmas[j]);
  }
  Var q = tape.mul(z, z);
  q = tape.mul_rowvec(q, tape.constant(inv_var));
  Var s = tape.row_sum(q);
  return tape.sadd(tape.smul(s, -0.5), constant);
}

// i.i.d. draws z_ij ~ N(0, sigma_j^2), row-major draw order for determinism
inline Matrix sample(const BaseDensity& d, int count, Rng& rng) {
  if (count <= 0) throw std::invalid_argument("sample: count must be > 0");
  const int n = d.dim();
  Matrix z(count, n);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < n; ++j) z(i, j) = d.sigmas[j] * rng.normal();
  return z;
}

namespace detail {

// adaptive Simpson on a smooth integrand
template <typename F>
double simpson_rec(F& f, double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <typename F>
double integrate(F f, double a, double b, double tol = 1e-13) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48);
}

}  // namespace detail

struct Theorem1Result {
  double lhs = 0.0;    // uniform-mixture expectation of the per-dim Gaussian log density
  double rhs = 0.0;    // log of the hierarchical model's marginal density
  double constant = 0.0;  // the additive constant C of the bound
  bool holds = false;
};

/*
 Numerical check of the hierarchical lower bound. For each dimension the
 scale interval [alpha_i, beta_i] is recovered from sigma_i^2 = alpha_i
 beta_i and beta_i - alpha_i = tau; the interval must satisfy
 0 < alpha_i < beta_i <= 1. The left side is the exact expectation of the
 Gaussian log density under sigma~U[alpha_i, beta_i]; the right side
 integrates the density itself by adaptive quadrature (in a max-shifted log
 domain so tail draws do not underflow). Jensen's inequality puts lhs below
 rhs for every z.
*/
inline Theorem1Result verify_theorem1_bound(const std::vector<double>& sigmas, const std::vector<double>& z,
                                            double tau) {
  if (sigmas.size() != z.size()) throw std::invalid_argument("verify_theorem1_bound: length mismatch");
  if (tau <= 0.0) throw std::invalid_argument("verify_theorem1_bound: tau must be > 0");
  Theorem1Result res;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const double sigma = sigmas[i];
    if (sigma <= 0.0) throw std::invalid_argument("verify_theorem1_bound: sigma must be > 0");
    const double alpha = 0.5 * (-tau + std::sqrt(tau * tau + 4.0 * sigma * sigma));
    const double beta = alpha + tau;
    if (alpha <= 0.0 || beta > 1.0 + 1e-12)
      throw std::invalid_argument("verify_theorem1_bound: no interval with 0 < alpha < beta <= 1 for given tau");

    const double ci = (beta * (1.0 - std::log(beta)) - alpha * (1.0 - std::log(alpha))) / (beta - alpha);
    res.constant += ci;
    const double zi = z[i];
    res.lhs += -zi * zi / (2.0 * sigma * sigma) - 0.5 * kLog2Pi + ci;

    // log-domain Gaussian in the scale variable
    auto ell = [zi](double s) { return -zi * zi / (2.0 * s * s) - std::log(s) - 0.5 * kLog2Pi; };
    double peak = std::max(ell(alpha), ell(beta));
    const double interior = std::fabs(zi);
    if (interior > alpha && interior < beta) peak = std::max(peak, ell(interior));
    const double m = peak;
    const double integral = detail::integrate([&](double s) { return std::exp(ell(s) - m); }, alpha, beta);
    res.rhs += m + std::log(integral) - std::log(beta - alpha);
  }
  res.holds = (res.lhs <= res.rhs + 1e-9) && (res.constant > 0.0);
  return res;
}

}  // namespace npca
