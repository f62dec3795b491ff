#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "npca/autodiff.hpp"
#include "npca/linalg.hpp"
#include "npca/matrix.hpp"

namespace npca {

enum class BlockMode { Train, Eval };

struct FrozenStats {
  Matrix mu_bar;     // 1 x n, mean of per-batch means
  Matrix sigma_bar;  // 1 x n, mean of per-batch (biased) variances
  Matrix v_tilde;    // n x n mean rotation, present iff the rotation is enabled
};

/*
 PCA block: zero-offset batch normalization followed by a data-driven
 rotation. In train mode the normalization uses the batch's own mean and
 biased variance and the rotation comes from the batch SVD (sign-canonical,
 det +1); in eval mode both are replaced by statistics frozen from a final
 pass over the training data. The offset is fixed at zero by construction and
 the learnable scale is kept positive by storing its logarithm. The rotation
 contributes no log-det; the normalization contributes
 sum_j [log alpha_j - 1/2 log(var_j + eps)] per sample.
*/
class PcaBlock {
 public:
  int dim = 0;
  bool with_rotation = true;  // whether the rotation stage is present
  double eps = 1e-5;
  BlockMode mode = BlockMode::Train;
  Matrix log_alpha;  // 1 x n
  std::optional<FrozenStats> stats;

  static PcaBlock create(int dim, bool with_rotation, double eps = 1e-5) {
    PcaBlock b;
    b.dim = dim;
    b.with_rotation = with_rotation;
    b.eps = eps;
    b.log_alpha = Matrix(1, dim);  // alpha = 1 at init
    return b;
  }

  Matrix alpha() const {
    Matrix a = log_alpha;
    for (auto& x : a.data()) x = std::exp(x);
    return a;
  }

  std::vector<Matrix*> params() { return {&log_alpha}; }

  // batch-norm stage
  std::pair<Matrix, std::vector<double>> bn_forward(const Matrix& x) const {
    if (x.cols() != dim) throw std::invalid_argument("PcaBlock::bn_forward: dimension mismatch");
    Matrix mu, var;
    if (mode == BlockMode::Train) {
      if (x.rows() < 2) throw std::invalid_argument("PcaBlock::bn_forward: train mode needs batch size >= 2");
      mu = x.col_mean();
      var = x.col_var();
      last_mu_ = mu;
      last_var_ = var;
    } else {
      require_stats();
      mu = stats->mu_bar;
      var = stats->sigma_bar;
    }
    const Matrix a = alpha();
    Matrix z = x;
    double ld = 0.0;
    std::vector<double> denom(dim);
    for (int j = 0; j < dim; ++j) {
      denom[j] = std::sqrt(var(0, j) + eps);
      ld += log_alpha(0, j) - 0.5 * std::log(var(0, j) + eps);
    }
    for (int i = 0; i < z.rows(); ++i) {
      double* row = z.row_ptr(i);
      for (int j = 0; j < dim; ++j) row[j] = a(0, j) * (row[j] - mu(0, j)) / denom[j];
    }
    return {std::move(z), std::vector<double>(x.rows(), ld)};
  }

  // rotation stage; the log-det contribution is identically zero
  Matrix pca_forward(const Matrix& z) const {
    if (!with_rotation) throw std::logic_error("PcaBlock::pca_forward: rotation stage disabled");
    if (z.cols() != dim) throw std::invalid_argument("PcaBlock::pca_forward: dimension mismatch");
    if (mode == BlockMode::Train) {
      if (z.rows() < dim)
        throw std::invalid_argument("PcaBlock::pca_forward: insufficient batch (need rows >= dim for full-rank SVD)");
      last_v_ = pca_rotation(svd_full(z));
      return matmul(z, last_v_);
    }
    require_stats();
    return matmul(z, stats->v_tilde);
  }

  // full block: Phi then (optionally) Psi
  std::pair<Matrix, std::vector<double>> forward(const Matrix& x) const {
    auto [z, ld] = bn_forward(x);
    if (with_rotation) z = pca_forward(z);
    return {std::move(z), std::move(ld)};
  }

  // exact inverse; eval mode uses frozen statistics, train mode the caches of
  // the most recent forward
  Matrix inverse(const Matrix& z) const {
    Matrix mu, var;
    const Matrix* v = nullptr;
    if (mode == BlockMode::Eval) {
      require_stats();
      mu = stats->mu_bar;
      var = stats->sigma_bar;
      if (with_rotation) v = &stats->v_tilde;
    } else {
      if (last_mu_.empty()) throw std::logic_error("PcaBlock::inverse: no cached batch statistics");
      mu = last_mu_;
      var = last_var_;
      if (with_rotation) {
        if (last_v_.empty()) throw std::logic_error("PcaBlock::inverse: no cached rotation");
        v = &last_v_;
      }
    }
    Matrix x = with_rotation ? matmul_nt(z, *v) : z;  // z V^T
    const Matrix a = alpha();
    for (int i = 0; i < x.rows(); ++i) {
      double* row = x.row_ptr(i);
      for (int j = 0; j < dim; ++j) row[j] = row[j] * std::sqrt(var(0, j) + eps) / a(0, j) + mu(0, j);
    }
    return x;
  }

  struct BlockAd {
    Var z;
    Var logdet_bn;  // not yet gradient-stopped; the objective decides
  };

  // train-mode tape forward; the rotation is taken from the batch values and
  // enters the graph as a constant, so gradient reaches it only through z
  BlockAd forward_ad(Tape& tp, Var x, Var log_alpha_var) const {
    if (mode != BlockMode::Train) throw std::logic_error("PcaBlock::forward_ad: tape path is train-mode only");
    if (x.rows < 2) throw std::invalid_argument("PcaBlock::forward_ad: train mode needs batch size >= 2");
    Var mu = tp.col_mean(x);
    Var centered = tp.sub_rowvec(x, mu);
    Var var = tp.col_mean(tp.mul(centered, centered));
    Var denom = tp.sqrt(tp.sadd(var, eps));
    Var alpha_var = tp.exp(log_alpha_var);
    Var z = tp.mul_rowvec(tp.div_rowvec(centered, denom), alpha_var);

    Var lsum = tp.sub(tp.sum(log_alpha_var), tp.smul(tp.sum(tp.log(tp.sadd(var, eps))), 0.5));
    Var ld = tp.mul_scalarvar(tp.constant(Matrix::ones(x.rows, 1)), lsum);

    {
      const Matrix& mval = tp.value(mu);
      const Matrix& vval = tp.value(var);
      last_mu_ = mval;
      last_var_ = vval;
    }
    if (with_rotation) {
      if (x.rows < dim)
        throw std::invalid_argument("PcaBlock::forward_ad: insufficient batch (need rows >= dim for full-rank SVD)");
      last_v_ = pca_rotation(svd_full(tp.value(z)));
      z = tp.matmul(z, tp.constant(last_v_));
    }
    return {z, ld};
  }

  const Matrix& last_batch_v() const {
    if (last_v_.empty()) throw std::logic_error("PcaBlock: no cached rotation");
    return last_v_;
  }

  void require_stats() const {
    if (!stats) throw std::logic_error("PcaBlock: eval mode requires frozen statistics");
    if (with_rotation && stats->v_tilde.empty()) throw std::logic_error("PcaBlock: frozen rotation missing");
  }

 private:
  mutable Matrix last_mu_, last_var_, last_v_;  // train-mode per-batch caches
};

// Final statistics pass: arithmetic means of the per-batch BatchNorm
// statistics and of the canonicalized per-batch rotations, the latter
// projected onto SO(n). Switches the block to eval mode. `h_forward` maps a
// raw data batch to the block's input (the baseline flow's output).
template <typename ForwardFn>
inline FrozenStats freeze_statistics(PcaBlock& block, ForwardFn&& h_forward, const std::vector<Matrix>& batches) {
  if (batches.empty()) throw std::invalid_argument("freeze_statistics: no batches");
  const int n = block.dim;
  Matrix mu_acc(1, n), var_acc(1, n), v_acc(n, n);
  block.mode = BlockMode::Train;
  for (const Matrix& x : batches) {
    Matrix zh = h_forward(x);
    mu_acc += zh.col_mean();
    var_acc += zh.col_var();
    if (block.with_rotation) {
      auto [zbn, ld] = block.bn_forward(zh);
      (void)ld;
      block.pca_forward(zbn);
      v_acc += block.last_batch_v();
    }
  }
  const double inv_m = 1.0 / static_cast<double>(batches.size());
  FrozenStats s;
  s.mu_bar = mu_acc * inv_m;
  s.sigma_bar = var_acc * inv_m;
  if (block.with_rotation) s.v_tilde = project_to_son(v_acc * inv_m);
  block.stats = s;
  block.mode = BlockMode::Eval;
  return s;
}

}  // namespace npca
