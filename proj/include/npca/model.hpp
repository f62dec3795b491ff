#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "npca/density.hpp"
#include "npca/flow.hpp"
#include "npca/pca_block.hpp"

namespace npca {

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"Baseline",      "Baseline-NIG",  "Baseline-BN", "Baseline-R",
                                                 "Baseline-BN-R", "Neural-PCA-IG", "Neural-PCA"};
  return names;
}

inline bool is_variant_name(const std::string& name) {
  for (const auto& n : variant_names())
    if (n == name) return true;
  return false;
}

// Baseline flow plus the optional tail block and base density, wired per the
// model-variant table.
struct Model {
  std::string variant;
  int dim = 0;
  FlowModel flow;
  std::optional<PcaBlock> block;
  BaseDensity base;

  std::vector<Matrix*> params() {
    std::vector<Matrix*> p = flow.params();
    if (block) {
      auto bp = block->params();
      p.insert(p.end(), bp.begin(), bp.end());
    }
    return p;
  }

  std::size_t param_scalar_count() const {
    std::size_t n = 0;
    auto* self = const_cast<Model*>(this);
    for (const Matrix* m : self->params()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  // normalizing-direction map with per-sample log-det, honoring the block mode
  std::pair<Matrix, std::vector<double>> forward(const Matrix& x) const {
    auto [z, logdet] = flow.forward(x);
    if (block) {
      auto [zb, ld_bn] = block->forward(z);
      z = std::move(zb);
      for (std::size_t i = 0; i < logdet.size(); ++i) logdet[i] += ld_bn[i];
    }
    return {std::move(z), std::move(logdet)};
  }

  Matrix inverse(const Matrix& z) const {
    Matrix x = z;
    if (block) x = block->inverse(x);
    return flow.inverse(x);
  }

  std::vector<double> nll(const Matrix& x) const {
    auto [z, logdet] = forward(x);
    std::vector<double> lp = log_prob(base, z);
    for (std::size_t i = 0; i < lp.size(); ++i) lp[i] = -(lp[i] + logdet[i]);
    return lp;
  }

  struct TrainAd {
    Var z;
    Var logdet_h;   // id -1 when the flow stack is empty
    Var logdet_bn;  // id -1 when no block
  };

  TrainAd forward_ad(Tape& tp, Var x, const std::vector<Var>& param_vars) const {
    std::size_t offset = 0;
    AdForward f = flow.forward_ad(tp, x, param_vars, offset);
    TrainAd out{f.z, f.logdet, Var{}};
    if (block) {
      if (offset >= param_vars.size()) throw std::logic_error("Model::forward_ad: missing block parameter var");
      auto b = block->forward_ad(tp, f.z, param_vars[offset]);
      out.z = b.z;
      out.logdet_bn = b.logdet_bn;
    }
    return out;
  }

  bool uses_batch_svd() const { return block && block->with_rotation; }
};

// Construct one of the seven comparison variants. NIG variants receive a
// linear sigma schedule over [sigma_min, sigma_max]; IG variants a unit one.
inline Model build_variant(const std::string& name, int n, int depth, int width, std::uint64_t seed,
                           double sigma_max = 1.0, double sigma_min = 0.1) {
  if (!is_variant_name(name)) throw std::invalid_argument("build_variant: unknown variant '" + name + "'");
  Rng rng(seed);
  Model m;
  m.variant = name;
  m.dim = n;
  m.flow = baseline_flow(n, depth, width, rng);

  const bool rotation_layer = (name == "Baseline-R" || name == "Baseline-BN-R");
  const bool batchnorm = (name == "Baseline-BN" || name == "Baseline-BN-R" || name == "Neural-PCA-IG" ||
                          name == "Neural-PCA");
  const bool pca_layer = (name == "Neural-PCA-IG" || name == "Neural-PCA");
  const bool isotropic = (name == "Baseline" || name == "Neural-PCA-IG");

  if (rotation_layer) m.flow.layers.emplace_back(HouseholderRotation::create(n, rng));
  if (batchnorm) m.block = PcaBlock::create(n, pca_layer);
  m.base = isotropic ? BaseDensity::isotropic(n)
                     : BaseDensity::non_isotropic(sigma_schedule(n, sigma_max, sigma_min));
  return m;
}

}  // namespace npca
