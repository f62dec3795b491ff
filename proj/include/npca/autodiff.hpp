#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "npca/matrix.hpp"

namespace npca {

// Handle into a Tape node.
struct Var {
  int id = -1;
  int rows = 0;
  int cols = 0;
};

/*
 Tape-based reverse-mode differentiation over Matrix operations.

 Nodes are appended in execution order, so ids are already topologically
 sorted; backward walks them once in strict reverse order. Forward values are
 cached at construction (define-by-run). Gradients are accumulated lazily; an
 untouched slot reads as zero. A tape accepts exactly one backward pass until
 reset_gradients() is called.
*/
class Tape {
  enum class Op {
    Leaf,
    Matmul,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    SubRow,
    MulRow,
    DivRow,
    SubCol,
    SMul,
    SAdd,
    MulSV,
    DivSV,
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
    LogAbs,
    Sqrt,
    Sum,
    Mean,
    RowSum,
    RowMax,
    ColMean,
    SliceCols,
    ConcatCols,
    Transpose,
    PermuteRows,
    StopGrad
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    Matrix value;
    double c = 0.0;
    int i0 = 0;
    std::vector<int> idx;
  };

 public:
  Var leaf(Matrix m) { return push(Op::Leaf, -1, -1, std::move(m)); }
  Var constant(Matrix m) { return leaf(std::move(m)); }
  Var param(Matrix m) { return leaf(std::move(m)); }

  Var matmul(Var a, Var b) {
    check(a);
    check(b);
    if (a.cols != b.rows) throw std::invalid_argument("Tape::matmul: inner dimensions " + shape(a) + " vs " + shape(b));
    return push(Op::Matmul, a.id, b.id, npca::matmul(val(a), val(b)));
  }

  Var add(Var a, Var b) { return binary_same(Op::Add, a, b); }
  Var sub(Var a, Var b) { return binary_same(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return binary_same(Op::Mul, a, b); }
  Var div(Var a, Var b) { return binary_same(Op::Div, a, b); }

  Var add_rowvec(Var a, Var r) { return binary_row(Op::AddRow, a, r); }
  Var sub_rowvec(Var a, Var r) { return binary_row(Op::SubRow, a, r); }
  Var mul_rowvec(Var a, Var r) { return binary_row(Op::MulRow, a, r); }
  Var div_rowvec(Var a, Var r) { return binary_row(Op::DivRow, a, r); }

  Var sub_colvec(Var a, Var c) {
    check(a);
    check(c);
    if (c.cols != 1 || c.rows != a.rows)
      throw std::invalid_argument("Tape::sub_colvec: need " + std::to_string(a.rows) + "x1, got " + shape(c));
    Matrix out = val(a);
    const Matrix& cv = val(c);
    for (int i = 0; i < out.rows(); ++i) {
      double* row = out.row_ptr(i);
      for (int j = 0; j < out.cols(); ++j) row[j] -= cv(i, 0);
    }
    return push(Op::SubCol, a.id, c.id, std::move(out));
  }

  Var smul(Var a, double c) {
    check(a);
    Matrix out = val(a);
    out *= c;
    Var v = push(Op::SMul, a.id, -1, std::move(out));
    nodes_[v.id].c = c;
    return v;
  }

  Var sadd(Var a, double c) {
    check(a);
    Matrix out = val(a);
    for (auto& x : out.data()) x += c;
    Var v = push(Op::SAdd, a.id, -1, std::move(out));
    nodes_[v.id].c = c;
    return v;
  }

  // elementwise multiply / divide by a 1x1 Var
  Var mul_scalarvar(Var a, Var s) { return scalarvar(Op::MulSV, a, s); }
  Var div_scalarvar(Var a, Var s) { return scalarvar(Op::DivSV, a, s); }

  Var tanh(Var a) { return unary(Op::Tanh, a, [](double x) { return std::tanh(x); }); }
  Var relu(Var a) { return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }
  Var softplus(Var a) {
    return unary(Op::Softplus, a, [](double x) {
      if (x > 30.0) return x;
      if (x < -30.0) return std::exp(x);
      return std::log1p(std::exp(x));
    });
  }
  Var exp(Var a) { return unary(Op::Exp, a, [](double x) { return std::exp(x); }); }
  Var log(Var a) { return unary(Op::Log, a, [](double x) { return std::log(x); }); }
  Var log_abs(Var a) { return unary(Op::LogAbs, a, [](double x) { return std::log(std::fabs(x)); }); }
  Var sqrt(Var a) { return unary(Op::Sqrt, a, [](double x) { return std::sqrt(x); }); }

  Var sum(Var a) {
    check(a);
    Matrix out(1, 1);
    out(0, 0) = val(a).sum();
    return push(Op::Sum, a.id, -1, std::move(out));
  }

  Var mean(Var a) {
    check(a);
    Matrix out(1, 1);
    out(0, 0) = val(a).sum() / val(a).size();
    return push(Op::Mean, a.id, -1, std::move(out));
  }

  // per-row sum over columns, B x n -> B x 1
  Var row_sum(Var a) {
    check(a);
    const Matrix& m = val(a);
    Matrix out(m.rows(), 1);
    for (int i = 0; i < m.rows(); ++i) {
      const double* row = m.row_ptr(i);
      double s = 0.0;
      for (int j = 0; j < m.cols(); ++j) s += row[j];
      out(i, 0) = s;
    }
    return push(Op::RowSum, a.id, -1, std::move(out));
  }

  // per-row max, B x n -> B x 1; backward routes to the first argmax
  Var row_max(Var a) {
    check(a);
    const Matrix& m = val(a);
    Matrix out(m.rows(), 1);
    Var v;
    std::vector<int> arg(m.rows());
    for (int i = 0; i < m.rows(); ++i) {
      const double* row = m.row_ptr(i);
      int best = 0;
      for (int j = 1; j < m.cols(); ++j)
        if (row[j] > row[best]) best = j;
      arg[i] = best;
      out(i, 0) = row[best];
    }
    v = push(Op::RowMax, a.id, -1, std::move(out));
    nodes_[v.id].idx = std::move(arg);
    return v;
  }

  // per-column mean, B x n -> 1 x n
  Var col_mean(Var a) {
    check(a);
    return push(Op::ColMean, a.id, -1, val(a).col_mean());
  }

  Var slice_cols(Var a, int c0, int c1) {
    check(a);
    Var v = push(Op::SliceCols, a.id, -1, val(a).slice_cols(c0, c1));
    nodes_[v.id].i0 = c0;
    return v;
  }

  Var concat_cols(Var a, Var b) {
    check(a);
    check(b);
    return push(Op::ConcatCols, a.id, b.id, npca::concat_cols(val(a), val(b)));
  }

  Var transpose(Var a) {
    check(a);
    return push(Op::Transpose, a.id, -1, val(a).t());
  }

  Var permute_rows(Var a, const std::vector<int>& perm) {
    check(a);
    if (static_cast<int>(perm.size()) != a.rows)
      throw std::invalid_argument("Tape::permute_rows: permutation length mismatch");
    Var v = push(Op::PermuteRows, a.id, -1, val(a).select_rows(perm));
    nodes_[v.id].idx = perm;
    return v;
  }

  // forwards the value, contributes zero gradient to its input
  Var stop_gradient(Var a) {
    check(a);
    return push(Op::StopGrad, a.id, -1, val(a));
  }

  const Matrix& value(Var v) const {
    check(v);
    return nodes_[v.id].value;
  }

  void backward(Var loss) {
    check(loss);
    if (loss.rows != 1 || loss.cols != 1) throw std::logic_error("Tape::backward: loss must be 1x1");
    if (backward_run_) throw std::logic_error("Tape::backward: second backward without reset_gradients");
    backward_run_ = true;
    grads_.assign(nodes_.size(), Matrix());
    grads_[loss.id] = Matrix::ones(1, 1);
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      if (grads_[id].empty()) continue;
      propagate(id);
    }
  }

  Matrix grad(Var v) const {
    check(v);
    if (!backward_run_) throw std::logic_error("Tape::grad: backward has not run");
    if (static_cast<std::size_t>(v.id) >= grads_.size() || grads_[v.id].empty())
      return Matrix(v.rows, v.cols);
    return grads_[v.id];
  }

  void reset_gradients() {
    grads_.clear();
    backward_run_ = false;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  Var push(Op op, int a, int b, Matrix value) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    const Matrix& v = nodes_.back().value;
    return Var{static_cast<int>(nodes_.size()) - 1, v.rows(), v.cols()};
  }

  void check(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::logic_error("Tape: invalid Var (forward has not produced this node)");
  }

  const Matrix& val(Var v) const { return nodes_[v.id].value; }

  static std::string shape(Var v) { return std::to_string(v.rows) + "x" + std::to_string(v.cols); }

  Var binary_same(Op op, Var a, Var b) {
    check(a);
    check(b);
    if (a.rows != b.rows || a.cols != b.cols)
      throw std::invalid_argument("Tape: shape mismatch " + shape(a) + " vs " + shape(b));
    Matrix out = val(a);
    const Matrix& bm = val(b);
    double* o = out.data().data();
    const double* q = bm.data().data();
    const int n = out.size();
    switch (op) {
      case Op::Add:
        for (int i = 0; i < n; ++i) o[i] += q[i];
        break;
      case Op::Sub:
        for (int i = 0; i < n; ++i) o[i] -= q[i];
        break;
      case Op::Mul:
        for (int i = 0; i < n; ++i) o[i] *= q[i];
        break;
      case Op::Div:
        for (int i = 0; i < n; ++i) o[i] /= q[i];
        break;
      default:
        throw std::logic_error("Tape: bad binary op");
    }
    return push(op, a.id, b.id, std::move(out));
  }

  Var binary_row(Op op, Var a, Var r) {
    check(a);
    check(r);
    if (r.rows != 1 || r.cols != a.cols)
      throw std::invalid_argument("Tape: row-vector op needs 1x" + std::to_string(a.cols) + ", got " + shape(r));
    Matrix out = val(a);
    const Matrix& rv = val(r);
    for (int i = 0; i < out.rows(); ++i) {
      double* row = out.row_ptr(i);
      for (int j = 0; j < out.cols(); ++j) {
        switch (op) {
          case Op::AddRow: row[j] += rv(0, j); break;
          case Op::SubRow: row[j] -= rv(0, j); break;
          case Op::MulRow: row[j] *= rv(0, j); break;
          case Op::DivRow: row[j] /= rv(0, j); break;
          default: throw std::logic_error("Tape: bad row op");
        }
      }
    }
    return push(op, a.id, r.id, std::move(out));
  }

  Var scalarvar(Op op, Var a, Var s) {
    check(a);
    check(s);
    if (s.rows != 1 || s.cols != 1) throw std::invalid_argument("Tape: scalar Var must be 1x1, got " + shape(s));
    const double c = val(s)(0, 0);
    Matrix out = val(a);
    if (op == Op::MulSV)
      out *= c;
    else
      out *= 1.0 / c;
    return push(op, a.id, s.id, std::move(out));
  }

  template <typename F>
  Var unary(Op op, Var a, F f) {
    check(a);
    Matrix out = val(a);
    for (auto& x : out.data()) x = f(x);
    return push(op, a.id, -1, std::move(out));
  }

  Matrix& grad_slot(int id) {
    Matrix& g = grads_[id];
    if (g.empty()) g = Matrix(nodes_[id].value.rows(), nodes_[id].value.cols());
    return g;
  }

  void accumulate(int id, const Matrix& delta) { grad_slot(id) += delta; }

  void propagate(int id) {
    const Node& n = nodes_[id];
    const Matrix& g = grads_[id];
    switch (n.op) {
      case Op::Leaf:
      case Op::StopGrad:
        if (n.op == Op::StopGrad) {
          // value forwarded, gradient cut
        }
        break;
      case Op::Matmul:
        accumulate(n.a, matmul_nt(g, nodes_[n.b].value));
        accumulate(n.b, matmul_tn(nodes_[n.a].value, g));
        break;
      case Op::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::Sub: {
        accumulate(n.a, g);
        Matrix neg = g;
        neg *= -1.0;
        accumulate(n.b, neg);
        break;
      }
      case Op::Mul:
        accumulate(n.a, hadamard(g, nodes_[n.b].value));
        accumulate(n.b, hadamard(g, nodes_[n.a].value));
        break;
      case Op::Div: {
        const Matrix& bv = nodes_[n.b].value;
        Matrix ga = g;
        for (int i = 0; i < ga.size(); ++i) ga.data()[i] /= bv.data()[i];
        accumulate(n.a, ga);
        const Matrix& av = nodes_[n.a].value;
        Matrix gb = g;
        for (int i = 0; i < gb.size(); ++i)
          gb.data()[i] *= -av.data()[i] / (bv.data()[i] * bv.data()[i]);
        accumulate(n.b, gb);
        break;
      }
      case Op::AddRow:
      case Op::SubRow: {
        accumulate(n.a, g);
        Matrix gr(1, g.cols());
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
        if (n.op == Op::SubRow) gr *= -1.0;
        accumulate(n.b, gr);
        break;
      }
      case Op::MulRow: {
        const Matrix& rv = nodes_[n.b].value;
        Matrix ga = g;
        for (int i = 0; i < ga.rows(); ++i)
          for (int j = 0; j < ga.cols(); ++j) ga(i, j) *= rv(0, j);
        accumulate(n.a, ga);
        const Matrix& av = nodes_[n.a].value;
        Matrix gr(1, g.cols());
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j) * av(i, j);
        accumulate(n.b, gr);
        break;
      }
      case Op::DivRow: {
        const Matrix& rv = nodes_[n.b].value;
        Matrix ga = g;
        for (int i = 0; i < ga.rows(); ++i)
          for (int j = 0; j < ga.cols(); ++j) ga(i, j) /= rv(0, j);
        accumulate(n.a, ga);
        const Matrix& av = nodes_[n.a].value;
        Matrix gr(1, g.cols());
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) gr(0, j) -= g(i, j) * av(i, j) / (rv(0, j) * rv(0, j));
        accumulate(n.b, gr);
        break;
      }
      case Op::SubCol: {
        accumulate(n.a, g);
        Matrix gc(g.rows(), 1);
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) gc(i, 0) -= g(i, j);
        accumulate(n.b, gc);
        break;
      }
      case Op::SMul: {
        Matrix ga = g;
        ga *= n.c;
        accumulate(n.a, ga);
        break;
      }
      case Op::SAdd:
        accumulate(n.a, g);
        break;
      case Op::MulSV: {
        const double s = nodes_[n.b].value(0, 0);
        Matrix ga = g;
        ga *= s;
        accumulate(n.a, ga);
        Matrix gs(1, 1);
        gs(0, 0) = hadamard(g, nodes_[n.a].value).sum();
        accumulate(n.b, gs);
        break;
      }
      case Op::DivSV: {
        const double s = nodes_[n.b].value(0, 0);
        Matrix ga = g;
        ga *= 1.0 / s;
        accumulate(n.a, ga);
        Matrix gs(1, 1);
        gs(0, 0) = -hadamard(g, nodes_[n.a].value).sum() / (s * s);
        accumulate(n.b, gs);
        break;
      }
      case Op::Tanh: {
        Matrix ga = g;
        const Matrix& y = n.value;
        for (int i = 0; i < ga.size(); ++i) ga.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
        accumulate(n.a, ga);
        break;
      }
      case Op::Relu: {
        Matrix ga = g;
        const Matrix& x = nodes_[n.a].value;
        for (int i = 0; i < ga.size(); ++i)
          if (x.data()[i] <= 0.0) ga.data()[i] = 0.0;
        accumulate(n.a, ga);
        break;
      }
      case Op::Softplus: {
        Matrix ga = g;
        const Matrix& x = nodes_[n.a].value;
        for (int i = 0; i < ga.size(); ++i) {
          const double xi = x.data()[i];
          const double sig = xi >= 0.0 ? 1.0 / (1.0 + std::exp(-xi)) : std::exp(xi) / (1.0 + std::exp(xi));
          ga.data()[i] *= sig;
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::Exp: {
        Matrix ga = hadamard(g, n.value);
        accumulate(n.a, ga);
        break;
      }
      case Op::Log:
      case Op::LogAbs: {
        Matrix ga = g;
        const Matrix& x = nodes_[n.a].value;
        for (int i = 0; i < ga.size(); ++i) ga.data()[i] /= x.data()[i];
        accumulate(n.a, ga);
        break;
      }
      case Op::Sqrt: {
        Matrix ga = g;
        const Matrix& y = n.value;
        for (int i = 0; i < ga.size(); ++i) ga.data()[i] *= 0.5 / y.data()[i];
        accumulate(n.a, ga);
        break;
      }
      case Op::Sum: {
        const Matrix& x = nodes_[n.a].value;
        accumulate(n.a, Matrix::filled(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case Op::Mean: {
        const Matrix& x = nodes_[n.a].value;
        accumulate(n.a, Matrix::filled(x.rows(), x.cols(), g(0, 0) / x.size()));
        break;
      }
      case Op::RowSum: {
        const Matrix& x = nodes_[n.a].value;
        Matrix ga(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i)
          for (int j = 0; j < x.cols(); ++j) ga(i, j) = g(i, 0);
        accumulate(n.a, ga);
        break;
      }
      case Op::RowMax: {
        const Matrix& x = nodes_[n.a].value;
        Matrix ga(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i) ga(i, n.idx[i]) = g(i, 0);
        accumulate(n.a, ga);
        break;
      }
      case Op::ColMean: {
        const Matrix& x = nodes_[n.a].value;
        Matrix ga(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i)
          for (int j = 0; j < x.cols(); ++j) ga(i, j) = g(0, j) / x.rows();
        accumulate(n.a, ga);
        break;
      }
      case Op::SliceCols: {
        const Matrix& x = nodes_[n.a].value;
        Matrix ga(x.rows(), x.cols());
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) ga(i, n.i0 + j) = g(i, j);
        accumulate(n.a, ga);
        break;
      }
      case Op::ConcatCols: {
        const int ca = nodes_[n.a].value.cols();
        accumulate(n.a, g.slice_cols(0, ca));
        accumulate(n.b, g.slice_cols(ca, g.cols()));
        break;
      }
      case Op::Transpose:
        accumulate(n.a, g.t());
        break;
      case Op::PermuteRows: {
        const Matrix& x = nodes_[n.a].value;
        Matrix ga(x.rows(), x.cols());
        for (int i = 0; i < g.rows(); ++i) {
          const int src = n.idx[i];
          for (int j = 0; j < g.cols(); ++j) ga(src, j) += g(i, j);
        }
        accumulate(n.a, ga);
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  bool backward_run_ = false;
};

}  // namespace npca
