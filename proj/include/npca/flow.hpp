#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "npca/autodiff.hpp"
#include "npca/linalg.hpp"
#include "npca/matrix.hpp"
#include "npca/rng.hpp"

namespace npca {

// tape forward result; logdet.id == -1 means an identically-zero contribution
struct AdForward {
  Var z;
  Var logdet;
};

// Affine coupling: the first `split` columns pass through and condition an
// elementwise affine map of the rest. The conditioner is a two-hidden-layer
// tanh network; the log-scale head is squashed to (-bound, bound) before
// exponentiation. Zero-initialized output heads make the layer the identity
// at construction.
struct AffineCoupling {
  int dim = 0;
  int split = 0;
  double bound = 5.0;
  Matrix w1, b1, w2, b2, ws, bs, wt, bt;

  static AffineCoupling create(int dim, int width, Rng& rng) {
    if (dim < 2) throw std::invalid_argument("AffineCoupling: dim must be >= 2");
    AffineCoupling c;
    c.dim = dim;
    c.split = dim / 2;
    const int act = dim - c.split;
    c.w1 = Matrix::gaussian(c.split, width, rng, 1.0 / std::sqrt(static_cast<double>(c.split)));
    c.b1 = Matrix(1, width);
    c.w2 = Matrix::gaussian(width, width, rng, 1.0 / std::sqrt(static_cast<double>(width)));
    c.b2 = Matrix(1, width);
    c.ws = Matrix(width, act);
    c.bs = Matrix(1, act);
    c.wt = Matrix(width, act);
    c.bt = Matrix(1, act);
    return c;
  }

  std::vector<Matrix*> params() { return {&w1, &b1, &w2, &b2, &ws, &bs, &wt, &bt}; }
  std::vector<const Matrix*> params() const { return {&w1, &b1, &w2, &b2, &ws, &bs, &wt, &bt}; }

  // conditioner outputs (log-scale, shift) for the passive block `a`
  std::pair<Matrix, Matrix> conditioner(const Matrix& a) const {
    Matrix h1 = matmul(a, w1);
    add_row(h1, b1);
    tanh_inplace(h1);
    Matrix h2 = matmul(h1, w2);
    add_row(h2, b2);
    tanh_inplace(h2);
    Matrix s = matmul(h2, ws);
    add_row(s, bs);
    tanh_inplace(s);
    s *= bound;
    Matrix t = matmul(h2, wt);
    add_row(t, bt);
    return {std::move(s), std::move(t)};
  }

  void forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const {
    Matrix a = x.slice_cols(0, split);
    Matrix xb = x.slice_cols(split, dim);
    auto [s, t] = conditioner(a);
    for (int i = 0; i < xb.rows(); ++i)
      for (int j = 0; j < xb.cols(); ++j) {
        xb(i, j) = xb(i, j) * std::exp(s(i, j)) + t(i, j);
        logdet[i] += s(i, j);
      }
    z = concat_cols(a, xb);
  }

  Matrix inverse(const Matrix& z) const {
    Matrix a = z.slice_cols(0, split);
    Matrix zb = z.slice_cols(split, dim);
    auto [s, t] = conditioner(a);
    for (int i = 0; i < zb.rows(); ++i)
      for (int j = 0; j < zb.cols(); ++j) zb(i, j) = (zb(i, j) - t(i, j)) * std::exp(-s(i, j));
    return concat_cols(a, zb);
  }

  AdForward forward_ad(Tape& tp, Var x, const Var* pv) const {
    Var a = tp.slice_cols(x, 0, split);
    Var xb = tp.slice_cols(x, split, dim);
    Var h1 = tp.tanh(tp.add_rowvec(tp.matmul(a, pv[0]), pv[1]));
    Var h2 = tp.tanh(tp.add_rowvec(tp.matmul(h1, pv[2]), pv[3]));
    Var s = tp.smul(tp.tanh(tp.add_rowvec(tp.matmul(h2, pv[4]), pv[5])), bound);
    Var t = tp.add_rowvec(tp.matmul(h2, pv[6]), pv[7]);
    Var zb = tp.add(tp.mul(xb, tp.exp(s)), t);
    return {tp.concat_cols(a, zb), tp.row_sum(s)};
  }

 private:
  static void add_row(Matrix& m, const Matrix& r) {
    for (int i = 0; i < m.rows(); ++i) {
      double* row = m.row_ptr(i);
      for (int j = 0; j < m.cols(); ++j) row[j] += r(0, j);
    }
  }
  static void tanh_inplace(Matrix& m) {
    for (auto& x : m.data()) x = std::tanh(x);
  }
};

// per-dimension affine map z = x * scale + bias
struct ActNorm {
  Matrix scale, bias;

  static ActNorm create(int dim) {
    ActNorm a;
    a.scale = Matrix::ones(1, dim);
    a.bias = Matrix(1, dim);
    return a;
  }

  std::vector<Matrix*> params() { return {&scale, &bias}; }
  std::vector<const Matrix*> params() const { return {&scale, &bias}; }

  void forward(const Matrix& x, Matrix& z, std::vector<double>& logdet) const {
    z = x;
    double ld = 0.0;
    for (int j = 0; j < z.cols(); ++j) ld += std::log(std::fabs(scale(0, j)));
    for (int i = 0; i < z.rows(); ++i) {
      double* row = z.row_ptr(i);
      for (int j = 0; j < z.cols(); ++j) row[j] = row[j] * scale(0, j) + bias(0, j);
      logdet[i] += ld;
    }
  }

  Matrix inverse(const Matrix& z) const {
    Matrix x = z;
    for (int i = 0; i < x.rows(); ++i) {
      double* row = x.row_ptr(i);
      for (int j = 0; j < x.cols(); ++j) row[j] = (row[j] - bias(0, j)) / scale(0, j);
    }
    return x;
  }

  AdForward forward_ad(Tape& tp, Var x, const Var* pv) const {
    Var z = tp.add_rowvec(tp.mul_rowvec(x, pv[0]), pv[1]);
    Var lsum = tp.sum(tp.log_abs(pv[0]));
    Var ld = tp.mul_scalarvar(tp.constant(Matrix::ones(x.rows, 1)), lsum);
    return {z, ld};
  }
};

// column reindexing; output column j is input column perm[j]
struct FixedPermutation {
  std::vector<int> perm;

  static FixedPermutation half_swap(int dim) {
    FixedPermutation p;
    p.perm.resize(dim);
    const int k = dim / 2;
    for (int j = 0; j < dim - k; ++j) p.perm[j] = k + j;
    for (int j = 0; j < k; ++j) p.perm[dim - k + j] = j;
    return p;
  }

  std::vector<Matrix*> params() { return {}; }
  std::vector<const Matrix*> params() const { return {}; }

  void forward(const Matrix& x, Matrix& z, std::vector<double>&) const {
    z = Matrix(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) z(i, j) = x(i, perm[j]);
  }

  Matrix inverse(const Matrix& z) const {
    Matrix x(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i)
      for (int j = 0; j < z.cols(); ++j) x(i, perm[j]) = z(i, j);
    return x;
  }

  AdForward forward_ad(Tape& tp, Var x, const Var*) const {
    const int n = static_cast<int>(perm.size());
    Matrix p(n, n);
    for (int j = 0; j < n; ++j) p(perm[j], j) = 1.0;
    return {tp.matmul(x, tp.constant(p)), Var{}};
  }
};

// trainable orthogonal map z = x R with R a product of `dim` Householder
// reflections; volume preserving, so no log-det contribution
struct HouseholderRotation {
  std::vector<Matrix> vectors;  // each 1 x dim

  static HouseholderRotation create(int dim, Rng& rng) {
    HouseholderRotation h;
    h.vectors.reserve(dim);
    for (int i = 0; i < dim; ++i) h.vectors.push_back(Matrix::gaussian(1, dim, rng));
    return h;
  }

  std::vector<Matrix*> params() {
    std::vector<Matrix*> p;
    for (auto& v : vectors) p.push_back(&v);
    return p;
  }
  std::vector<const Matrix*> params() const {
    std::vector<const Matrix*> p;
    for (const auto& v : vectors) p.push_back(&v);
    return p;
  }

  Matrix rotation() const {
    std::vector<std::vector<double>> vs;
    for (const auto& v : vectors) vs.push_back(v.data());
    return householder_product(vs);
  }

  void forward(const Matrix& x, Matrix& z, std::vector<double>&) const { z = matmul(x, rotation()); }

  Matrix inverse(const Matrix& z) const { return matmul_nt(z, rotation()); }

  AdForward forward_ad(Tape& tp, Var x, const Var* pv) const {
    const int n = static_cast<int>(vectors.size());
    Var r = tp.constant(Matrix::identity(n));
    for (int i = 0; i < n; ++i) {
      if (vectors[i].fnorm() <= 1e-12) throw std::runtime_error("HouseholderRotation: degenerate reflection");
      Var v = pv[i];
      Var outer = tp.matmul(tp.transpose(v), v);
      Var nsq = tp.row_sum(tp.mul(v, v));
      Var h = tp.sub(tp.constant(Matrix::identity(n)), tp.div_scalarvar(tp.smul(outer, 2.0), nsq));
      r = tp.matmul(r, h);
    }
    return {tp.matmul(x, r), Var{}};
  }
};

using FlowLayer = std::variant<AffineCoupling, ActNorm, FixedPermutation, HouseholderRotation>;

inline const char* layer_name(const FlowLayer& l) {
  switch (l.index()) {
    case 0: return "AffineCoupling";
    case 1: return "ActNorm";
    case 2: return "FixedPermutation";
    case 3: return "HouseholderRotation";
  }
  return "?";
}

// Ordered stack of invertible layers acting in the normalizing direction,
// with exact per-sample log-det accounting.
class FlowModel {
 public:
  int dim = 0;
  std::vector<FlowLayer> layers;

  std::vector<Matrix*> params() {
    std::vector<Matrix*> out;
    for (auto& l : layers) {
      auto p = std::visit([](auto& x) { return x.params(); }, l);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  std::pair<Matrix, std::vector<double>> forward(const Matrix& x) const {
    if (x.cols() != dim && !layers.empty()) throw std::invalid_argument("FlowModel::forward: dimension mismatch");
    Matrix z = x;
    std::vector<double> logdet(x.rows(), 0.0);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      Matrix next;
      std::visit([&](const auto& l) { l.forward(z, next, logdet); }, layers[i]);
      if (!next.is_finite())
        throw std::runtime_error("FlowModel::forward: non-finite output at layer " + std::to_string(i) + " (" +
                                 layer_name(layers[i]) + ")");
      z = std::move(next);
    }
    return {std::move(z), std::move(logdet)};
  }

  Matrix inverse(const Matrix& z) const {
    if (!z.is_finite()) throw std::invalid_argument("FlowModel::inverse: non-finite input");
    Matrix x = z;
    for (std::size_t i = layers.size(); i-- > 0;) {
      x = std::visit([&](const auto& l) { return l.inverse(x); }, layers[i]);
      if (!x.is_finite())
        throw std::runtime_error("FlowModel::inverse: non-finite output at layer " + std::to_string(i) + " (" +
                                 layer_name(layers[i]) + ")");
    }
    return x;
  }

  // param_vars must follow params() order; offset advances past this model's block
  AdForward forward_ad(Tape& tp, Var x, const std::vector<Var>& param_vars, std::size_t& offset) const {
    Var z = x;
    Var logdet{};
    for (const auto& l : layers) {
      const std::size_t count = std::visit([](const auto& v) { return v.params().size(); }, l);
      if (offset + count > param_vars.size()) throw std::logic_error("FlowModel::forward_ad: parameter vars exhausted");
      AdForward step = std::visit([&](const auto& v) { return v.forward_ad(tp, z, param_vars.data() + offset); }, l);
      offset += count;
      z = step.z;
      if (step.logdet.id >= 0) logdet = logdet.id >= 0 ? tp.add(logdet, step.logdet) : step.logdet;
    }
    return {z, logdet};
  }

  AdForward forward_ad(Tape& tp, Var x, const std::vector<Var>& param_vars) const {
    std::size_t offset = 0;
    return forward_ad(tp, x, param_vars, offset);
  }
};

// standard baseline: `depth` blocks of half-swap permutation + coupling
inline FlowModel baseline_flow(int dim, int depth, int width, Rng& rng) {
  FlowModel m;
  m.dim = dim;
  for (int i = 0; i < depth; ++i) {
    m.layers.emplace_back(FixedPermutation::half_swap(dim));
    m.layers.emplace_back(AffineCoupling::create(dim, width, rng));
  }
  return m;
}

}  // namespace npca
