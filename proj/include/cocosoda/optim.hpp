#pragma once

// AdamW with decoupled weight decay, a linear warmup/decay schedule, and
// global-norm gradient clipping.

#include "cocosoda/encoder.hpp"

#include <cmath>
#include <vector>

namespace cocosoda::optim {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Linear warmup over the first warmup_frac of total steps, then linear
/// decay to zero at total_steps.
inline double scheduled_lr(double base_lr, std::size_t step, std::size_t total_steps, double warmup_frac) {
  if (total_steps == 0) return base_lr;
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
  const double t = static_cast<double>(step);
  if (step < warmup) return base_lr * (t + 1.0) / static_cast<double>(warmup);
  const double remaining = static_cast<double>(total_steps - std::min(step, total_steps));
  const double span = static_cast<double>(total_steps - warmup);
  return span > 0 ? base_lr * remaining / span : base_lr;
}

/// Scales gradients so their joint L2 norm is at most max_norm. Returns the
/// norm before clipping.
template <typename S>
double clip_global_norm(std::vector<encoder::Parameters<S>*> grads, double max_norm) {
  double sq = 0.0;
  for (auto* g : grads)
    for (const auto* m : g->const_ptrs()) sq += static_cast<double>(m->squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / (norm + 1e-12));
    for (auto* g : grads)
      for (auto& t : g->tensors()) *t.value *= scale;
  }
  return norm;
}

template <typename S>
class AdamW {
 public:
  AdamW() = default;
  AdamW(AdamWConfig cfg, const std::vector<const encoder::Parameters<S>*>& params) : cfg_(cfg) {
    for (const auto* p : params) {
      m_.push_back(p->zeros_like());
      v_.push_back(p->zeros_like());
    }
  }

  [[nodiscard]] std::size_t steps_taken() const { return t_; }
  [[nodiscard]] const AdamWConfig& config() const { return cfg_; }
  [[nodiscard]] std::vector<encoder::Parameters<S>>& first_moments() { return m_; }
  [[nodiscard]] std::vector<encoder::Parameters<S>>& second_moments() { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

  void step(const std::vector<encoder::Parameters<S>*>& params, const std::vector<encoder::Parameters<S>*>& grads,
            double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("AdamW: parameter group count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S step_size = static_cast<S>(lr / bc1);
    const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
    const S eps = static_cast<S>(cfg_.eps);
    const S decay = static_cast<S>(1.0 - lr * cfg_.weight_decay);
    for (std::size_t g = 0; g < params.size(); ++g) {
      auto pt = params[g]->tensors();
      auto gt = grads[g]->tensors();
      auto mt = m_[g].tensors();
      auto vt = v_[g].tensors();
      for (std::size_t i = 0; i < pt.size(); ++i) {
        auto& p = *pt[i].value;
        const auto& grad = *gt[i].value;
        auto& m = *mt[i].value;
        auto& v = *vt[i].value;
        m = b1 * m + (S(1) - b1) * grad;
        v = b2 * v + (S(1) - b2) * grad.cwiseProduct(grad);
        p *= decay;
        p.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<encoder::Parameters<S>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace cocosoda::optim
