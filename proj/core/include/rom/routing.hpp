#pragma once

// Token-level top-K router with optional renormalization over the selected
// set, multiplicative jitter noise during training, the auxiliary balance
// loss, and utilization statistics.

#include <cstdint>
#include <map>
#include <vector>

#include "rom/rng.hpp"
#include "rom/tensor.hpp"

namespace rom {

enum class RoutingMode { shared, independent };

struct RouterConfig {
  int num_experts = 1;
  int top_k = 1;
  bool renormalize = true;
  double jitter_eps = 0.01;    // multiplicative logit noise in [1-eps, 1+eps], training only
  double balance_alpha = 0.0;  // 0 disables the balance term

  void validate() const {
    if (num_experts < 1) throw ContractError("RouterConfig: num_experts must be >= 1");
    if (top_k < 1 || top_k > num_experts)
      throw ContractError("RouterConfig: top_k must satisfy 1 <= K <= N, got K=" +
                          std::to_string(top_k) + " N=" + std::to_string(num_experts));
    if (jitter_eps < 0 || balance_alpha < 0)
      throw ContractError("RouterConfig: jitter_eps and balance_alpha must be nonnegative");
  }
};

template <class T>
struct RouterWeights {
  Tensor<T> w_r;  // [D_m, N]
};

// Per-token expert selection. indices is row-major [L,K], ordered by
// descending probability with ties broken toward the lower expert id.
// gates stays on the tape; probs carries the full softmax.
template <class T>
struct RoutingDecision {
  int num_experts = 0;
  int top_k = 0;
  std::vector<int32_t> indices;  // [L*K]
  Tensor<T> gates;               // [L,K]
  Tensor<T> probs;               // [L,N]

  int64_t tokens() const { return top_k > 0 ? static_cast<int64_t>(indices.size()) / top_k : 0; }
};

// Top-K of one row by value, descending, ties to the lower index.
template <class T>
std::vector<int32_t> select_topk(const T* row, int n, int k) {
  std::vector<int32_t> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](int32_t a, int32_t b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return a < b;
  });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

// logits = x * W_r, jittered when training; probs = softmax(logits); the K
// largest probabilities are selected per token. Gradient reaches the router
// only through the softmax probabilities of the selected experts.
template <class T>
RoutingDecision<T> route(const Tensor<T>& x, const RouterWeights<T>& w, const RouterConfig& cfg,
                         bool training, uint64_t noise_key) {
  cfg.validate();
  if (x.rank() != 2 || w.w_r.rank() != 2 || x.dim(1) != w.w_r.dim(0))
    throw ShapeError("route: input " + shape_str(x.shape()) + " does not match router " +
                     shape_str(w.w_r.shape()));
  if (w.w_r.dim(1) != cfg.num_experts)
    throw ContractError("route: router width " + std::to_string(w.w_r.dim(1)) +
                        " != num_experts " + std::to_string(cfg.num_experts));
  const int64_t L = x.dim(0);
  const int n = cfg.num_experts;
  const int k = cfg.top_k;

  Tensor<T> logits = matmul(x, w.w_r);  // [L,N]
  if (training && cfg.jitter_eps > 0) {
    Tensor<T> noise = Tensor<T>::zeros({L, static_cast<int64_t>(n)});
    T* nv = noise.data();
    for (int64_t t = 0; t < L; ++t) {
      Rng rng(stream_key({noise_key, static_cast<uint64_t>(t)}));
      for (int j = 0; j < n; ++j)
        nv[t * n + j] = static_cast<T>(rng.uniform(1.0 - cfg.jitter_eps, 1.0 + cfg.jitter_eps));
    }
    logits = mul(logits, noise);
  }

  RoutingDecision<T> d;
  d.num_experts = n;
  d.top_k = k;
  d.probs = softmax(logits, -1);
  d.indices.resize(static_cast<size_t>(L) * k);
  const T* pv = d.probs.data();
  for (int64_t t = 0; t < L; ++t) {
    auto top = select_topk(pv + t * n, n, k);
    std::copy(top.begin(), top.end(), d.indices.begin() + t * k);
  }
  Tensor<T> selected = gather_per_row(d.probs, d.indices, k);  // [L,K]
  d.gates = cfg.renormalize ? normalize_rows(selected) : selected;
  return d;
}

// Load-balance loss over a stack of routed layers:
//   alpha * sum_j N * sum_i F_ij * mean_t probs_j[t,i]
// F_ij is the fraction of layer j's L*K assignments that went to expert i and
// is treated as a constant; gradient flows through the probabilities only.
template <class T>
Tensor<T> balance_loss(const std::vector<Tensor<T>>& probs_per_layer,
                       const std::vector<const std::vector<int32_t>*>& indices_per_layer,
                       const RouterConfig& cfg) {
  if (probs_per_layer.size() != indices_per_layer.size())
    throw ContractError("balance_loss: probs/indices layer counts differ");
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (size_t j = 0; j < probs_per_layer.size(); ++j) {
    const Tensor<T>& probs = probs_per_layer[j];
    const std::vector<int32_t>& idx = *indices_per_layer[j];
    if (probs.rank() != 2)
      throw ShapeError("balance_loss: probs must be [L,N], got " + shape_str(probs.shape()));
    const int64_t n = probs.dim(1);
    if (idx.empty() || probs.dim(0) == 0)
      throw ContractError("balance_loss: empty token set in layer " + std::to_string(j));
    Tensor<T> fractions = Tensor<T>::zeros({n});
    T* fv = fractions.data();
    for (int32_t i : idx) {
      if (i < 0 || i >= n) throw ContractError("balance_loss: expert index out of range");
      fv[i] += T(1);
    }
    const T inv = T(1) / static_cast<T>(idx.size());
    for (int64_t i = 0; i < n; ++i) fv[i] *= inv;
    Tensor<T> mean_probs = mean_axis0(probs);                        // [N]
    Tensor<T> term = scale(sum(mul(mean_probs, fractions)), T(n));   // N * sum_i F_i * pbar_i
    total = add(total, term);
  }
  return scale(total, static_cast<T>(cfg.balance_alpha));
}

struct RoutingStats {
  std::vector<double> utilization;  // assignment fraction per expert; sums to 1
  double entropy = 0.0;             // nats, of the utilization distribution
  double max_load = 0.0;
};

template <class T>
RoutingStats routing_stats(const RoutingDecision<T>& d) {
  RoutingStats s;
  s.utilization.assign(static_cast<size_t>(d.num_experts), 0.0);
  if (d.indices.empty()) throw ContractError("routing_stats: empty decision");
  const double inv = 1.0 / static_cast<double>(d.indices.size());
  for (int32_t i : d.indices) s.utilization[static_cast<size_t>(i)] += inv;
  for (double u : s.utilization) {
    if (u > 0) s.entropy -= u * std::log(u);
    s.max_load = std::max(s.max_load, u);
  }
  return s;
}

}  // namespace rom
