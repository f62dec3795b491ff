#pragma once

#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <vector>

#include "npca/data.hpp"
#include "npca/density.hpp"
#include "npca/model.hpp"
#include "npca/optim.hpp"

namespace npca {

struct TrainOptions {
  long iterations = 10000;
  int batch_size = 100;
  double lr = 1e-3;
  bool cosine_schedule = true;
  long val_check_every = 500;
  std::uint64_t seed = 0;
  int max_consecutive_skips = 50;
  bool quiet = true;
};

struct MetricsRow {
  long iteration = 0;
  long epoch = 0;
  double objective = 0.0;
  double lr = 0.0;
  double val_nll = std::numeric_limits<double>::quiet_NaN();  // NaN when not evaluated
};

struct TrainState {
  Model model;
  std::vector<MetricsRow> metrics;
  long iterations_done = 0;
  long skipped = 0;
  double best_val_nll = std::numeric_limits<double>::infinity();
  long best_iteration = -1;
};

// batch-mean objective; the normalization log-det term is treated as a
// constant during differentiation
inline Var objective_ad(Tape& tp, Var z, Var logdet_h, Var logdet_bn, const BaseDensity& base) {
  Var total = log_prob_ad(tp, base, z);
  if (logdet_h.id >= 0) total = tp.add(total, logdet_h);
  if (logdet_bn.id >= 0) total = tp.add(total, tp.stop_gradient(logdet_bn));
  return tp.mean(total);
}

// value-path objective for logging and tests
inline double objective(const Matrix& z, const std::vector<double>& logdet_h, const std::vector<double>& logdet_bn,
                        const BaseDensity& base) {
  std::vector<double> lp = log_prob(base, z);
  double s = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    double v = lp[i];
    if (!logdet_h.empty()) v += logdet_h[i];
    if (!logdet_bn.empty()) v += logdet_bn[i];
    s += v;
  }
  return s / static_cast<double>(lp.size());
}

// mean negative log-likelihood of a batch under the model's current mode
inline double mean_nll(const Model& model, const Matrix& x) {
  std::vector<double> n = model.nll(x);
  double s = 0.0;
  for (double v : n) s += v;
  return s / static_cast<double>(n.size());
}

namespace detail {

inline std::vector<Matrix> snapshot_params(Model& m) {
  std::vector<Matrix> out;
  for (Matrix* p : m.params()) out.push_back(*p);
  return out;
}

inline void restore_params(Model& m, const std::vector<Matrix>& snap) {
  auto ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = snap[i];
}

}  // namespace detail

/*
 Epoch loop ascending the exact-likelihood objective. Per iteration: the
 baseline flow and the block's normalization run on the tape, the batch
 rotation (when present) enters as a constant, and Adam descends the negated
 objective under a cosine-annealed learning rate. Every `val_check_every`
 iterations the validation NLL selects a checkpoint; the best one is restored
 before the final statistics pass freezes the block for eval mode.
*/
inline TrainState train(Model model, const Dataset& data, const TrainOptions& opt) {
  TrainState st;
  Rng shuffle_rng(opt.seed ^ 0x7261696eull);

  Matrix train_x = data.split_x(Split::Train);
  Matrix val_x = data.split_x(Split::Val);
  const int min_batch = model.uses_batch_svd() ? model.dim : 2;
  if (model.block && opt.batch_size < min_batch)
    throw std::invalid_argument("train: batch size too small for the block's statistics");

  const bool can_validate = val_x.rows() >= (model.block ? min_batch : 1);
  std::vector<Matrix> best_snapshot;

  auto params = model.params();
  Adam adam(params, AdamConfig{});

  long iter = 0;
  long epoch = 0;
  int consecutive_skips = 0;
  while (iter < opt.iterations) {
    std::vector<int> order = shuffle_rng.permutation(train_x.rows());
    Matrix shuffled = train_x.select_rows(order);
    std::vector<Matrix> batches = make_batches(shuffled, opt.batch_size, min_batch);
    if (batches.empty()) throw std::invalid_argument("train: no usable batches");
    for (const Matrix& xb : batches) {
      if (iter >= opt.iterations) break;
      const double lr = opt.cosine_schedule ? cosine_lr(opt.lr, iter, opt.iterations) : opt.lr;

      Tape tp;
      std::vector<Var> pvars;
      pvars.reserve(params.size());
      for (Matrix* p : params) pvars.push_back(tp.param(*p));
      Var x = tp.constant(xb);

      bool skipped = false;
      try {
        Model::TrainAd f = model.forward_ad(tp, x, pvars);
        Var j = objective_ad(tp, f.z, f.logdet_h, f.logdet_bn, model.base);
        const double jval = tp.value(j)(0, 0);
        if (!std::isfinite(jval)) {
          skipped = true;
        } else {
          Var loss = tp.smul(j, -1.0);
          tp.backward(loss);
          std::vector<Matrix> grads;
          grads.reserve(params.size());
          for (const Var& pv : pvars) grads.push_back(tp.grad(pv));
          if (!adam.step(params, grads, lr)) {
            skipped = true;
          } else {
            MetricsRow row;
            row.iteration = iter;
            row.epoch = epoch;
            row.objective = jval;
            row.lr = lr;
            st.metrics.push_back(row);
          }
        }
      } catch (const std::runtime_error&) {
        skipped = true;  // non-finite intermediates inside a layer
      }

      if (skipped) {
        ++st.skipped;
        if (!opt.quiet) std::cerr << "train: non-finite objective at iteration " << iter << ", update skipped\n";
        if (++consecutive_skips > opt.max_consecutive_skips)
          throw std::runtime_error("train: aborted after " + std::to_string(consecutive_skips) +
                                   " consecutive non-finite iterations");
      } else {
        consecutive_skips = 0;
      }

      ++iter;
      if (can_validate && opt.val_check_every > 0 && iter % opt.val_check_every == 0 && !st.metrics.empty()) {
        const int vb = std::min(val_x.rows(), std::max(opt.batch_size, min_batch));
        const double vnll = mean_nll(model, val_x.slice_rows(0, vb));
        st.metrics.back().val_nll = vnll;
        if (std::isfinite(vnll) && vnll < st.best_val_nll) {
          st.best_val_nll = vnll;
          st.best_iteration = iter;
          best_snapshot = detail::snapshot_params(model);
        }
      }
    }
    ++epoch;
  }
  st.iterations_done = iter;

  if (!best_snapshot.empty()) detail::restore_params(model, best_snapshot);

  if (model.block) {
    std::vector<Matrix> stat_batches = make_batches(train_x, opt.batch_size, min_batch);
    freeze_statistics(*model.block, [&](const Matrix& xb) { return model.flow.forward(xb).first; }, stat_batches);
  }

  st.model = std::move(model);
  return st;
}

// eval-mode latents; refuses to run a block on batch statistics
inline Matrix extract_latents(const Model& model, const Matrix& x) {
  if (model.block && model.block->mode != BlockMode::Eval)
    throw std::logic_error("extract_latents: block statistics are not frozen");
  return model.forward(x).first;
}

}  // namespace npca
