#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "npca/matrix.hpp"

namespace npca {

// cosine annealing from lr0 down to zero over `total` steps
inline double cosine_lr(double lr0, long step, long total) {
  if (total <= 0) return lr0;
  if (step >= total) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) / total));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Parameters are updated in place with
// the descent direction of the supplied gradients. A step containing any
// non-finite gradient is skipped entirely and reported via the return value.
class Adam {
 public:
  Adam() = default;

  Adam(const std::vector<Matrix*>& params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }

  bool step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("Adam::step: parameter count mismatch");
    for (const Matrix& g : grads)
      if (!g.is_finite()) return false;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Matrix& p = *params[k];
      const Matrix& g = grads[k];
      Matrix& m = m_[k];
      Matrix& v = v_[k];
      for (int i = 0; i < p.size(); ++i) {
        const double gi = g.data()[i];
        m.data()[i] = cfg_.beta1 * m.data()[i] + (1.0 - cfg_.beta1) * gi;
        v.data()[i] = cfg_.beta2 * v.data()[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m.data()[i] / bc1;
        const double vhat = v.data()[i] / bc2;
        p.data()[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    return true;
  }

  long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace npca
