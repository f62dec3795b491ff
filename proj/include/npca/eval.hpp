#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "npca/autodiff.hpp"
#include "npca/linalg.hpp"
#include "npca/matrix.hpp"
#include "npca/model.hpp"
#include "npca/optim.hpp"
#include "npca/rng.hpp"

namespace npca {

enum class Side { Leading, Trailing };

inline const char* side_name(Side s) { return s == Side::Leading ? "leading" : "trailing"; }

struct CorruptedRep {
  int kappa = 0;
  Side side = Side::Trailing;
  Matrix data;  // N x (n - kappa)
};

// drop the leading or trailing kappa dimensions
inline CorruptedRep corrupt(const Matrix& z, int kappa, Side side) {
  if (kappa < 0 || kappa >= z.cols()) throw std::invalid_argument("corrupt: kappa must be in [0, n-1]");
  CorruptedRep r;
  r.kappa = kappa;
  r.side = side;
  r.data = (side == Side::Trailing) ? z.slice_cols(0, z.cols() - kappa) : z.slice_cols(kappa, z.cols());
  return r;
}

namespace detail {

inline void require_labeled(const Matrix& x, const std::vector<int>& y, const char* who) {
  if (static_cast<int>(y.size()) != x.rows()) throw std::invalid_argument(std::string(who) + ": label count mismatch");
}

inline int distinct_classes(const std::vector<int>& y) {
  std::vector<int> s(y);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return static_cast<int>(s.size());
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace detail

struct MlpOptions {
  int hidden = 200;
  double dropout = 0.2;
  int epochs = 100;
  int batch = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/*
 One-hidden-layer MLP classifier: (n-kappa) - hidden - ReLU - Dropout - n_C,
 cross-entropy, Adam. The epoch with the best validation accuracy supplies
 the reported test accuracy; dropout is active only while training.
*/
class MlpClassifier {
 public:
  MlpClassifier(int in_dim, int n_classes, const MlpOptions& opt) : opt_(opt), rng_(opt.seed) {
    w1_ = Matrix::gaussian(in_dim, opt.hidden, rng_, std::sqrt(2.0 / in_dim));
    b1_ = Matrix(1, opt.hidden);
    w2_ = Matrix::gaussian(opt.hidden, n_classes, rng_, 1.0 / std::sqrt(static_cast<double>(opt.hidden)));
    b2_ = Matrix(1, n_classes);
    n_classes_ = n_classes;
  }

  void fit(const Matrix& x, const std::vector<int>& y, const Matrix& vx, const std::vector<int>& vy) {
    detail::require_labeled(x, y, "MlpClassifier");
    if (detail::distinct_classes(y) < 2) throw std::invalid_argument("MlpClassifier: single-class training set");
    std::vector<Matrix*> params = {&w1_, &b1_, &w2_, &b2_};
    Adam adam(params, AdamConfig{});
    const long total_steps = static_cast<long>(opt_.epochs) * std::max(1, x.rows() / opt_.batch);
    long step = 0;
    double best_val = -1.0;
    std::vector<Matrix> best = {w1_, b1_, w2_, b2_};
    for (int epoch = 0; epoch < opt_.epochs; ++epoch) {
      std::vector<int> order = rng_.permutation(x.rows());
      for (int start = 0; start + 2 <= x.rows(); start += opt_.batch) {
        const int end = std::min(start + opt_.batch, x.rows());
        std::vector<int> idx(order.begin() + start, order.begin() + end);
        Matrix xb = x.select_rows(idx);
        Matrix onehot(end - start, n_classes_);
        for (int i = 0; i < end - start; ++i) onehot(i, y[idx[i]]) = 1.0;

        Tape tp;
        Var vw1 = tp.param(w1_), vb1 = tp.param(b1_), vw2 = tp.param(w2_), vb2 = tp.param(b2_);
        Var h = tp.relu(tp.add_rowvec(tp.matmul(tp.constant(xb), vw1), vb1));
        if (opt_.dropout > 0.0) {
          Matrix mask(end - start, opt_.hidden);
          const double keep = 1.0 - opt_.dropout;
          for (auto& v : mask.data()) v = (rng_.uniform() < keep) ? 1.0 / keep : 0.0;
          h = tp.mul(h, tp.constant(mask));
        }
        Var logits = tp.add_rowvec(tp.matmul(h, vw2), vb2);
        Var m = tp.stop_gradient(tp.row_max(logits));
        Var lse = tp.add(tp.log(tp.row_sum(tp.exp(tp.sub_colvec(logits, m)))), m);
        Var picked = tp.row_sum(tp.mul(logits, tp.constant(onehot)));
        Var loss = tp.mean(tp.sub(lse, picked));
        tp.backward(loss);
        std::vector<Matrix> grads = {tp.grad(vw1), tp.grad(vb1), tp.grad(vw2), tp.grad(vb2)};
        adam.step(params, grads, cosine_lr(opt_.lr, step, total_steps));
        ++step;
      }
      if (vx.rows() > 0) {
        const double val_acc = detail::accuracy(predict(vx), vy);
        if (val_acc > best_val) {
          best_val = val_acc;
          best = {w1_, b1_, w2_, b2_};
        }
      }
    }
    if (vx.rows() > 0) {
      w1_ = best[0];
      b1_ = best[1];
      w2_ = best[2];
      b2_ = best[3];
    }
  }

  std::vector<int> predict(const Matrix& x) const {
    Matrix h = matmul(x, w1_);
    for (int i = 0; i < h.rows(); ++i)
      for (int j = 0; j < h.cols(); ++j) {
        double v = h(i, j) + b1_(0, j);
        h(i, j) = v > 0.0 ? v : 0.0;
      }
    Matrix logits = matmul(h, w2_);
    std::vector<int> pred(x.rows());
    for (int i = 0; i < logits.rows(); ++i) {
      int best = 0;
      for (int j = 0; j < logits.cols(); ++j)
        if (logits(i, j) + b2_(0, j) > logits(i, best) + b2_(0, best)) best = j;
      pred[i] = best;
    }
    return pred;
  }

 private:
  MlpOptions opt_;
  Rng rng_;
  Matrix w1_, b1_, w2_, b2_;
  int n_classes_ = 0;
};

inline double mlp_classify(const Matrix& train_x, const std::vector<int>& train_y, const Matrix& val_x,
                           const std::vector<int>& val_y, const Matrix& test_x, const std::vector<int>& test_y,
                           int n_classes, const MlpOptions& opt = {}) {
  MlpClassifier clf(train_x.cols(), n_classes, opt);
  clf.fit(train_x, train_y, val_x, val_y);
  return detail::accuracy(clf.predict(test_x), test_y);
}

struct SvmOptions {
  double lambda = 1e-4;
  int epochs = 200;
  int batch = 64;
  std::uint64_t seed = 0;
};

// Linear SVM trained by the projected hinge-loss subgradient method
// (Pegasos). Multiclass is one-vs-rest on the per-class scores. Weights use
// an augmented bias feature; rows of `weights` are per-class hyperplanes
// (bias last).
struct SvmResult {
  double accuracy = 0.0;
  Matrix weights;  // n_classes (or 1 if binary) x (d+1)
};

namespace detail {

inline std::vector<double> svm_binary(const Matrix& x, const std::vector<int>& pm, const SvmOptions& opt, Rng& rng) {
  const int d = x.cols();
  std::vector<double> w(d + 1, 0.0);
  const double radius = 1.0 / std::sqrt(opt.lambda);
  long t = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<int> order = rng.permutation(x.rows());
    for (int start = 0; start < x.rows(); start += opt.batch) {
      const int end = std::min(start + opt.batch, x.rows());
      ++t;
      const double eta = 1.0 / (opt.lambda * static_cast<double>(t));
      std::vector<double> grad(d + 1, 0.0);
      for (int k = start; k < end; ++k) {
        const int i = order[k];
        const double* row = x.row_ptr(i);
        double score = w[d];
        for (int j = 0; j < d; ++j) score += w[j] * row[j];
        if (pm[i] * score < 1.0) {
          for (int j = 0; j < d; ++j) grad[j] += pm[i] * row[j];
          grad[d] += pm[i];
        }
      }
      const double scale = 1.0 - eta * opt.lambda;
      const double gf = eta / static_cast<double>(end - start);
      double norm_sq = 0.0;
      for (int j = 0; j <= d; ++j) {
        w[j] = scale * w[j] + gf * grad[j];
        norm_sq += w[j] * w[j];
      }
      const double norm = std::sqrt(norm_sq);
      if (norm > radius)
        for (int j = 0; j <= d; ++j) w[j] *= radius / norm;
    }
  }
  return w;
}

}  // namespace detail

inline SvmResult linear_svm_classify(const Matrix& train_x, const std::vector<int>& train_y, const Matrix& test_x,
                                     const std::vector<int>& test_y, int n_classes, const SvmOptions& opt = {}) {
  detail::require_labeled(train_x, train_y, "linear_svm_classify");
  if (detail::distinct_classes(train_y) < 2) throw std::invalid_argument("linear_svm_classify: single-class training set");
  const int d = train_x.cols();
  Rng rng(opt.seed);
  SvmResult res;
  std::vector<int> pred(test_x.rows());
  if (n_classes == 2) {
    std::vector<int> pm(train_y.size());
    for (std::size_t i = 0; i < train_y.size(); ++i) pm[i] = train_y[i] == 1 ? 1 : -1;
    std::vector<double> w = detail::svm_binary(train_x, pm, opt, rng);
    res.weights = Matrix(1, d + 1, w);
    for (int i = 0; i < test_x.rows(); ++i) {
      double score = w[d];
      for (int j = 0; j < d; ++j) score += w[j] * test_x(i, j);
      pred[i] = score >= 0.0 ? 1 : 0;
    }
  } else {
    res.weights = Matrix(n_classes, d + 1);
    for (int c = 0; c < n_classes; ++c) {
      std::vector<int> pm(train_y.size());
      for (std::size_t i = 0; i < train_y.size(); ++i) pm[i] = train_y[i] == c ? 1 : -1;
      std::vector<double> w = detail::svm_binary(train_x, pm, opt, rng);
      for (int j = 0; j <= d; ++j) res.weights(c, j) = w[j];
    }
    for (int i = 0; i < test_x.rows(); ++i) {
      int best = 0;
      double best_score = -1e300;
      for (int c = 0; c < n_classes; ++c) {
        double score = res.weights(c, d);
        for (int j = 0; j < d; ++j) score += res.weights(c, j) * test_x(i, j);
        if (score > best_score) {
          best_score = score;
          best = c;
        }
      }
      pred[i] = best;
    }
  }
  res.accuracy = detail::accuracy(pred, test_y);
  return res;
}

struct MiOptions {
  int width = 128;
  int embed_dim = 64;
  int steps = 2000;
  int batch = 256;
  int negatives = 4;  // in-batch permutations forming the product-measure pairs
  double lr = 1e-3;
  bool cosine_schedule = true;
  double holdout_frac = 0.2;
  std::uint64_t seed = 0;
};

/*
 Density-ratio mutual-information estimate. The ratio model is
 r(x, z) = 1 + softplus(<phi(f(x)), phi(z)>) with f mapping x into the
 corrupted representation's space and phi a shared embedding net; the
 objective maximizes E_joint[r] - 1/2 E_product[r^2], with product pairs
 formed by permuting z within the batch. The returned estimate is the mean
 log-ratio over held-out joint pairs.
*/
class MiEstimator {
 public:
  MiEstimator(int x_dim, int z_dim, const MiOptions& opt) : opt_(opt), rng_(opt.seed) {
    fw1_ = Matrix::gaussian(x_dim, opt.width, rng_, std::sqrt(2.0 / x_dim));
    fb1_ = Matrix(1, opt.width);
    fw2_ = Matrix::gaussian(opt.width, z_dim, rng_, 1.0 / std::sqrt(static_cast<double>(opt.width)));
    fb2_ = Matrix(1, z_dim);
    pw1_ = Matrix::gaussian(z_dim, opt.width, rng_, std::sqrt(2.0 / z_dim));
    pb1_ = Matrix(1, opt.width);
    pw2_ = Matrix::gaussian(opt.width, opt.embed_dim, rng_, 1.0 / std::sqrt(static_cast<double>(opt.width)));
    pb2_ = Matrix(1, opt.embed_dim);
  }

  void fit(const Matrix& x, const Matrix& z) {
    std::vector<Matrix*> params = {&fw1_, &fb1_, &fw2_, &fb2_, &pw1_, &pb1_, &pw2_, &pb2_};
    Adam adam(params, AdamConfig{});
    for (int step = 0; step < opt_.steps; ++step) {
      std::vector<int> idx(static_cast<std::size_t>(std::min(opt_.batch, x.rows())));
      for (auto& i : idx) i = static_cast<int>(rng_.uniform_int(x.rows()));
      Matrix xb = x.select_rows(idx);
      Matrix zb = z.select_rows(idx);

      Tape tp;
      std::vector<Var> pv;
      pv.reserve(params.size());
      for (Matrix* p : params) pv.push_back(tp.param(*p));
      Var ex = embed_x(tp, tp.constant(xb), pv.data());
      Var ez = embed_z(tp, tp.constant(zb), pv.data());
      Var r_joint = ratio(tp, ex, ez);
      Var sq_acc{};
      for (int k = 0; k < std::max(1, opt_.negatives); ++k) {
        Var ez_perm = tp.permute_rows(ez, rng_.permutation(zb.rows()));
        Var r_prod = ratio(tp, ex, ez_perm);
        Var sq = tp.mean(tp.mul(r_prod, r_prod));
        sq_acc = sq_acc.id >= 0 ? tp.add(sq_acc, sq) : sq;
      }
      Var obj = tp.sub(tp.mean(r_joint), tp.smul(sq_acc, 0.5 / std::max(1, opt_.negatives)));
      Var loss = tp.smul(obj, -1.0);
      tp.backward(loss);
      std::vector<Matrix> grads;
      for (const Var& v : pv) grads.push_back(tp.grad(v));
      adam.step(params, grads, opt_.cosine_schedule ? cosine_lr(opt_.lr, step, opt_.steps) : opt_.lr);
    }
  }

  // mean log ratio over joint pairs
  double mean_log_ratio(const Matrix& x, const Matrix& z) const {
    Tape tp;
    std::vector<const Matrix*> params = {&fw1_, &fb1_, &fw2_, &fb2_, &pw1_, &pb1_, &pw2_, &pb2_};
    std::vector<Var> pv;
    for (const Matrix* p : params) pv.push_back(tp.constant(*p));
    Var ex = embed_x(tp, tp.constant(x), pv.data());
    Var ez = embed_z(tp, tp.constant(z), pv.data());
    const Matrix& r = tp.value(ratio(tp, ex, ez));
    double s = 0.0;
    for (int i = 0; i < r.rows(); ++i) s += std::log(r(i, 0));
    return s / r.rows();
  }

 private:
  static Var two_layer(Tape& tp, Var in, Var w1, Var b1, Var w2, Var b2) {
    Var h = tp.relu(tp.add_rowvec(tp.matmul(in, w1), b1));
    return tp.add_rowvec(tp.matmul(h, w2), b2);
  }
  static Var embed_x(Tape& tp, Var x, const Var* pv) {
    Var fx = two_layer(tp, x, pv[0], pv[1], pv[2], pv[3]);
    return two_layer(tp, fx, pv[4], pv[5], pv[6], pv[7]);
  }
  static Var embed_z(Tape& tp, Var z, const Var* pv) { return two_layer(tp, z, pv[4], pv[5], pv[6], pv[7]); }
  static Var ratio(Tape& tp, Var ex, Var ez) {
    return tp.sadd(tp.softplus(tp.row_sum(tp.mul(ex, ez))), 1.0);
  }

  MiOptions opt_;
  Rng rng_;
  Matrix fw1_, fb1_, fw2_, fb2_;  // feature map f
  Matrix pw1_, pb1_, pw2_, pb2_;  // embedding phi
};

inline double estimate_mi(const Matrix& x, const CorruptedRep& zk, const MiOptions& opt = {}) {
  if (x.rows() != zk.data.rows()) throw std::invalid_argument("estimate_mi: row count mismatch");
  if (x.rows() < 2) throw std::invalid_argument("estimate_mi: need at least 2 samples to form negatives");
  Rng split_rng(opt.seed ^ 0x1417ull);
  std::vector<int> perm = split_rng.permutation(x.rows());
  const int held = std::max(1, static_cast<int>(opt.holdout_frac * x.rows()));
  std::vector<int> hold_idx(perm.begin(), perm.begin() + held);
  std::vector<int> fit_idx(perm.begin() + held, perm.end());
  MiEstimator est(x.cols(), zk.data.cols(), opt);
  est.fit(x.select_rows(fit_idx), zk.data.select_rows(fit_idx));
  return est.mean_log_ratio(x.select_rows(hold_idx), zk.data.select_rows(hold_idx));
}

struct PostPcaResult {
  Matrix train_out, test_out;
  Matrix v_post;
  double diagnostic = 0.0;  // || V_post - I ||_F
  bool degenerate = false;
};

// Center by the train mean, fit a rotation by SVD of the train latents and
// apply it to both splits. Near-equal or vanishing singular values leave the
// rotation unidentifiable and are flagged.
inline PostPcaResult post_pca(const Matrix& train_z, const Matrix& test_z) {
  if (train_z.cols() != test_z.cols()) throw std::invalid_argument("post_pca: dimension mismatch");
  PostPcaResult r;
  Matrix mu = train_z.col_mean();
  Matrix ct = train_z, cs = test_z;
  for (int i = 0; i < ct.rows(); ++i)
    for (int j = 0; j < ct.cols(); ++j) ct(i, j) -= mu(0, j);
  for (int i = 0; i < cs.rows(); ++i)
    for (int j = 0; j < cs.cols(); ++j) cs(i, j) -= mu(0, j);
  SvdResult svd = svd_full(ct);
  r.v_post = pca_rotation(svd);
  r.train_out = matmul(ct, r.v_post);
  r.test_out = matmul(cs, r.v_post);
  Matrix diff = r.v_post - Matrix::identity(r.v_post.rows());
  r.diagnostic = diff.fnorm();
  const double top = svd.sigma.front();
  const double gap_floor = 4.0 / std::sqrt(static_cast<double>(train_z.rows()));
  if (svd.sigma.back() <= 1e-10 * std::max(top, 1.0)) r.degenerate = true;
  for (std::size_t j = 0; j + 1 < svd.sigma.size(); ++j)
    if ((svd.sigma[j] - svd.sigma[j + 1]) / top < gap_floor) r.degenerate = true;
  return r;
}

struct RotationDistances {
  std::vector<double> distances;
  double mean = 0.0, stddev = 0.0, min = 0.0, max = 0.0;
};

// Frobenius (chordal) distances || R - V^(m) ||_F with summary statistics
inline RotationDistances rotation_distance_histogram(const std::vector<Matrix>& vs, const Matrix& reference) {
  RotationDistances out;
  if (vs.empty()) return out;
  out.min = 1e300;
  out.max = -1e300;
  for (const Matrix& v : vs) {
    const double d = (reference - v).fnorm();
    out.distances.push_back(d);
    out.mean += d;
    out.min = std::min(out.min, d);
    out.max = std::max(out.max, d);
  }
  out.mean /= static_cast<double>(out.distances.size());
  for (double d : out.distances) out.stddev += (d - out.mean) * (d - out.mean);
  out.stddev = std::sqrt(out.stddev / static_cast<double>(out.distances.size()));
  return out;
}

// Latent sweeps along a leading or trailing block: the block dims carry
// 2 - 4*lambda (so +2 at lambda=0 down to -2 at lambda=1), the rest are zero;
// rows are mapped through the generative direction.
inline Matrix interpolate_latents(const Model& model, int block_size, Side side,
                                  const std::vector<double>& lambdas) {
  if (model.block && model.block->mode != BlockMode::Eval)
    throw std::logic_error("interpolate_latents: model statistics are not frozen");
  const int n = model.dim;
  if (block_size < 1 || block_size > n) throw std::invalid_argument("interpolate_latents: bad block size");
  Matrix z(static_cast<int>(lambdas.size()), n);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const double c = -2.0 * lambdas[i] + 2.0 * (1.0 - lambdas[i]);
    if (side == Side::Leading)
      for (int j = 0; j < block_size; ++j) z(static_cast<int>(i), j) = c;
    else
      for (int j = n - block_size; j < n; ++j) z(static_cast<int>(i), j) = c;
  }
  return model.inverse(z);
}

enum class DataKind { Tabular, Image };

// Image data (dequantized bytes) is reported in bits per dimension with the
// 256-level offset; tabular data in nats per dimension.
inline double bits_per_dim(double nll_nats, int n, DataKind kind) {
  if (n <= 0) throw std::invalid_argument("bits_per_dim: n must be positive");
  if (kind == DataKind::Image) return nll_nats / (n * std::log(2.0)) + 8.0;
  return nll_nats / n;
}

}  // namespace npca
