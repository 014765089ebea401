#pragma once

// AdamW with decoupled weight decay, the cosine-with-warmup schedule, and
// global gradient clipping.

#include "rom/config.hpp"
#include "rom/model.hpp"

namespace rom {

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  int64_t step = 0;  // completed updates

  template <class Params>
  void init(const Params& params) {
    m.clear();
    v.clear();
    for (const auto& p : params.items()) {
      m.emplace_back(static_cast<size_t>(p.tensor.size()), T(0));
      v.emplace_back(static_cast<size_t>(p.tensor.size()), T(0));
    }
    step = 0;
  }
};

// Linear warmup to the peak, then cosine decay to exactly zero at total_steps.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
  const int64_t total = cfg.total_steps();
  const int64_t warmup = cfg.warmup_steps();
  if (step < 0 || step > total) throw ContractError("lr_at: step out of schedule range");
  if (step <= warmup)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <class T>
double clip_global_grad_norm(ParamRegistry<T>& params, double max_norm) {
  double sq = 0;
  for (auto& p : params.items()) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params.items()) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.grad()) g *= s;
    }
  }
  return norm;
}

// One bias-corrected AdamW update:
//   theta <- theta - lr*wd*theta - lr * mhat / (sqrt(vhat) + eps)
// Parameters flagged decay=false skip the weight-decay term. Non-finite
// gradients abort with the offending tensor named.
template <class T>
void adamw_step(ParamRegistry<T>& params, AdamState<T>& state, double lr, double beta1,
                double beta2, double eps, double weight_decay) {
  if (state.m.size() != params.count()) throw ContractError("adamw_step: state not initialized");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.count(); ++i) {
    auto& p = params.items()[i];
    if (!p.tensor.has_grad()) continue;
    const std::vector<T>& g = p.tensor.grad();
    std::vector<T>& val = p.tensor.value();
    std::vector<T>& m = state.m[i];
    std::vector<T>& v = state.v[i];
    const double wd = p.weight_decay ? weight_decay : 0.0;
    for (size_t j = 0; j < val.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      if (!std::isfinite(gj))
        throw NumericError("adamw_step: non-finite gradient in tensor '" + p.name + "'");
      const double mj = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * gj;
      const double vj = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      double theta = static_cast<double>(val[j]);
      theta -= lr * wd * theta;
      theta -= lr * mhat / (std::sqrt(vhat) + eps);
      val[j] = static_cast<T>(theta);
    }
  }
}

}  // namespace rom
