#pragma once

// Routed Mamba layer: sparse mixtures of Conv/Gate/Out projection experts
// around a single shared conv + scan path, with one routing decision reused
// by every expertized projection (shared mode) or one router per projection
// (independent mode). Also the shared-routing SwiGLU FFN mixture used in MLP
// positions, and the dispatch/combine primitives both are built on.

#include <array>
#include <map>
#include <optional>

#include "rom/mamba.hpp"
#include "rom/routing.hpp"

namespace rom {

enum class Proj : int { conv = 0, gate = 1, out = 2, dt = 3, x = 4 };

inline const char* proj_name(Proj p) {
  switch (p) {
    case Proj::conv: return "conv";
    case Proj::gate: return "gate";
    case Proj::out: return "out";
    case Proj::dt: return "dt";
    case Proj::x: return "x";
  }
  return "?";
}

struct ExpertizedSet {
  std::array<bool, 5> flags{};  // indexed by Proj

  bool contains(Proj p) const { return flags[static_cast<size_t>(p)]; }
  void insert(Proj p) { flags[static_cast<size_t>(p)] = true; }

  static ExpertizedSet of(std::initializer_list<Proj> ps) {
    ExpertizedSet s;
    for (Proj p : ps) s.insert(p);
    return s;
  }
};

// Token order within each expert group stays ascending, so grouped execution
// is reproducible regardless of grouping strategy.
struct DispatchPlan {
  std::vector<std::vector<int32_t>> rows;   // rows[e]: original token positions
  std::vector<std::vector<int32_t>> slots;  // slots[e]: which of the K slots picked e
};

template <class T>
DispatchPlan dispatch_plan(const RoutingDecision<T>& d) {
  DispatchPlan p;
  p.rows.resize(static_cast<size_t>(d.num_experts));
  p.slots.resize(static_cast<size_t>(d.num_experts));
  const int64_t L = d.tokens();
  for (int64_t t = 0; t < L; ++t)
    for (int j = 0; j < d.top_k; ++j) {
      const int32_t e = d.indices[static_cast<size_t>(t * d.top_k + j)];
      p.rows[static_cast<size_t>(e)].push_back(static_cast<int32_t>(t));
      p.slots[static_cast<size_t>(e)].push_back(j);
    }
  return p;
}

// Gathers the tokens assigned to each expert. Experts that receive no tokens
// get an undefined tensor, not an error.
template <class T>
std::vector<Tensor<T>> dispatch_by_expert(const Tensor<T>& x, const RoutingDecision<T>& d) {
  if (x.rank() != 2 || x.dim(0) != d.tokens())
    throw ShapeError("dispatch_by_expert: input " + shape_str(x.shape()) + " does not match " +
                     std::to_string(d.tokens()) + " routed tokens");
  DispatchPlan plan = dispatch_plan(d);
  std::vector<Tensor<T>> groups(static_cast<size_t>(d.num_experts));
  for (int e = 0; e < d.num_experts; ++e)
    if (!plan.rows[static_cast<size_t>(e)].empty())
      groups[static_cast<size_t>(e)] = gather_rows(x, plan.rows[static_cast<size_t>(e)]);
  return groups;
}

// Restores original token order, scaling each group row by its gate weight
// when apply_gates is set. combine(dispatch(x)) with identity experts and
// unit gates is the identity.
template <class T>
Tensor<T> combine(const std::vector<Tensor<T>>& grouped, const RoutingDecision<T>& d,
                  bool apply_gates = true) {
  if (static_cast<int>(grouped.size()) != d.num_experts)
    throw ShapeError("combine: " + std::to_string(grouped.size()) + " groups for " +
                     std::to_string(d.num_experts) + " experts");
  DispatchPlan plan = dispatch_plan(d);
  const int64_t L = d.tokens();
  Tensor<T> gates_flat = reshape(d.gates, {L * d.top_k, 1});
  Tensor<T> acc;
  for (int e = 0; e < d.num_experts; ++e) {
    const auto& rows = plan.rows[static_cast<size_t>(e)];
    if (rows.empty()) continue;
    if (!grouped[static_cast<size_t>(e)].defined())
      throw ContractError("combine: expert " + std::to_string(e) + " received tokens but no output");
    Tensor<T> g = grouped[static_cast<size_t>(e)];
    if (apply_gates) {
      std::vector<int32_t> flat(rows.size());
      for (size_t i = 0; i < rows.size(); ++i)
        flat[i] = static_cast<int32_t>(rows[i] * d.top_k + plan.slots[static_cast<size_t>(e)][i]);
      Tensor<T> ge = reshape(gather_rows(gates_flat, flat), {static_cast<int64_t>(rows.size())});
      g = scale_rows(g, ge);
    }
    Tensor<T> placed = scatter_add_rows(g, rows, L);
    acc = acc.defined() ? add(acc, placed) : placed;
  }
  if (!acc.defined()) throw ContractError("combine: decision routed no tokens");
  return acc;
}

template <class T>
struct RoMWeights {
  MambaDims dims;
  int n_experts = 1;
  ExpertizedSet expertized;

  // Expertized members hold N copies; everything else exactly one.
  std::vector<Tensor<T>> w_in;     // [D_m, D_e] Conv Proj expert(s)
  std::vector<Tensor<T>> w_g;      // [D_m, D_e] Gate Proj expert(s)
  std::vector<Tensor<T>> w_out;    // [D_e, D_m] Out Proj expert(s)
  std::vector<Tensor<T>> w_x;      // [D_e, d_r + 2*D_s] x Proj
  std::vector<Tensor<T>> w_dt;     // [d_r, D_e] dt Proj
  std::vector<Tensor<T>> dt_bias;  // [D_e]

  // Always shared: Conv 1D kernel and state parameters.
  Tensor<T> conv_w;  // [k, D_e]
  Tensor<T> conv_b;  // [D_e]
  Tensor<T> a_log;   // [D_e, D_s]
  Tensor<T> d_skip;  // [D_e]; undefined when disabled

  RouterWeights<T> router;                 // shared-mode router [D_m, N]
  std::map<Proj, RouterWeights<T>> proj_routers;  // independent mode only

  void validate() const {
    auto need = [&](Proj p, size_t have) {
      const size_t want = expertized.contains(p) ? static_cast<size_t>(n_experts) : 1u;
      if (have != want)
        throw ContractError(std::string("RoMWeights: ") + proj_name(p) + " has " +
                            std::to_string(have) + " copies, expected " + std::to_string(want));
    };
    need(Proj::conv, w_in.size());
    need(Proj::gate, w_g.size());
    need(Proj::out, w_out.size());
    need(Proj::x, w_x.size());
    need(Proj::dt, w_dt.size());
    if (w_dt.size() != dt_bias.size())
      throw ContractError("RoMWeights: dt proj and bias copy counts differ");
    if (router.w_r.defined() && router.w_r.dim(1) != n_experts)
      throw ContractError("RoMWeights: router width does not match expert count");
  }
};

template <class T>
RoMWeights<T> init_rom_weights(const MambaDims& dims, int n_experts, ExpertizedSet expertized,
                               RoutingMode mode, uint64_t seed, bool use_d_skip = true) {
  dims.validate();
  if (n_experts < 1) throw ContractError("init_rom_weights: n_experts must be >= 1");
  Rng rng(seed);
  RoMWeights<T> w;
  w.dims = dims;
  w.n_experts = n_experts;
  w.expertized = expertized;

  auto copies = [&](Proj p) { return expertized.contains(p) ? n_experts : 1; };
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(dims.d_model));
  const double ex_bound = 1.0 / std::sqrt(static_cast<double>(dims.d_expand));
  for (int i = 0; i < copies(Proj::conv); ++i)
    w.w_in.push_back(init_uniform<T>({dims.d_model, dims.d_expand}, rng, in_bound));
  for (int i = 0; i < copies(Proj::gate); ++i)
    w.w_g.push_back(init_uniform<T>({dims.d_model, dims.d_expand}, rng, in_bound));
  for (int i = 0; i < copies(Proj::out); ++i)
    w.w_out.push_back(init_uniform<T>({dims.d_expand, dims.d_model}, rng, ex_bound));
  for (int i = 0; i < copies(Proj::x); ++i)
    w.w_x.push_back(init_uniform<T>({dims.d_expand, dims.dt_rank + 2 * dims.d_state}, rng, ex_bound));
  for (int i = 0; i < copies(Proj::dt); ++i) {
    w.w_dt.push_back(init_uniform<T>({dims.dt_rank, dims.d_expand}, rng,
                                     1.0 / std::sqrt(static_cast<double>(dims.dt_rank))));
    w.dt_bias.push_back(init_dt_bias<T>(dims.d_expand, rng));
  }
  w.conv_w = init_uniform<T>({dims.conv_kernel, dims.d_expand}, rng,
                             1.0 / std::sqrt(static_cast<double>(dims.conv_kernel)));
  w.conv_b = Tensor<T>::zeros({dims.d_expand});
  w.a_log = init_a_log<T>(dims.d_expand, dims.d_state);
  if (use_d_skip) w.d_skip = Tensor<T>::full({dims.d_expand}, T(1));

  if (mode == RoutingMode::shared) {
    w.router.w_r = init_uniform<T>({dims.d_model, n_experts}, rng, in_bound);
  } else {
    for (Proj p : {Proj::conv, Proj::gate, Proj::out, Proj::dt, Proj::x})
      if (expertized.contains(p))
        w.proj_routers[p] = RouterWeights<T>{init_uniform<T>({dims.d_model, n_experts}, rng, in_bound)};
  }
  return w;
}

template <class T>
struct RomOutput {
  Tensor<T> out;
  // Shared mode returns the single decision under Proj::gate; independent
  // mode returns one entry per expertized projection.
  std::vector<std::pair<Proj, RoutingDecision<T>>> decisions;
  // Expert indices actually consumed at each projection site, per token slot.
  std::map<Proj, std::vector<int32_t>> site_indices;
};

namespace detail {

// Unweighted sum over each token's selected experts: sum_{i in S_t} x_t W_i.
template <class T>
Tensor<T> routed_sum(const Tensor<T>& x, const std::vector<Tensor<T>>& w,
                     const RoutingDecision<T>& d) {
  DispatchPlan plan = dispatch_plan(d);
  const int64_t L = x.dim(0);
  Tensor<T> acc;
  for (int e = 0; e < d.num_experts; ++e) {
    const auto& rows = plan.rows[static_cast<size_t>(e)];
    if (rows.empty()) continue;
    Tensor<T> part = scatter_add_rows(matmul(gather_rows(x, rows), w[static_cast<size_t>(e)]), rows, L);
    acc = acc.defined() ? add(acc, part) : part;
  }
  if (!acc.defined()) acc = Tensor<T>::zeros({L, w[0].dim(1)});
  return acc;
}

// Gate-weighted sum at the Out Proj: sum_{i in S_t} gate_i(t) * z_t W_out,i.
template <class T>
Tensor<T> routed_weighted_sum(const Tensor<T>& z, const std::vector<Tensor<T>>& w,
                              const RoutingDecision<T>& d) {
  std::vector<Tensor<T>> groups = dispatch_by_expert(z, d);
  std::vector<Tensor<T>> outs(groups.size());
  for (int e = 0; e < d.num_experts; ++e)
    if (groups[static_cast<size_t>(e)].defined())
      outs[static_cast<size_t>(e)] = matmul(groups[static_cast<size_t>(e)], w[static_cast<size_t>(e)]);
  return combine(outs, d, /*apply_gates=*/true);
}

// Per-expert ssm_inputs when dt and/or x projections are expertized (top-1
// only: the scan consumes one parameter set per token).
template <class T>
std::tuple<Tensor<T>, Tensor<T>, Tensor<T>> routed_ssm_inputs(const Tensor<T>& u,
                                                              const RoMWeights<T>& w,
                                                              const RoutingDecision<T>& d) {
  DispatchPlan plan = dispatch_plan(d);
  const int64_t L = u.dim(0);
  Tensor<T> delta, b, c;
  for (int e = 0; e < w.n_experts; ++e) {
    const auto& rows = plan.rows[static_cast<size_t>(e)];
    if (rows.empty()) continue;
    SsmInnerWeights<T> inner;
    inner.w_x = w.w_x[w.expertized.contains(Proj::x) ? static_cast<size_t>(e) : 0];
    inner.w_dt = w.w_dt[w.expertized.contains(Proj::dt) ? static_cast<size_t>(e) : 0];
    inner.dt_bias = w.dt_bias[w.expertized.contains(Proj::dt) ? static_cast<size_t>(e) : 0];
    auto [dg, bg, cg] = ssm_inputs(gather_rows(u, rows), inner, w.dims);
    Tensor<T> dp = scatter_add_rows(dg, rows, L);
    Tensor<T> bp = scatter_add_rows(bg, rows, L);
    Tensor<T> cp = scatter_add_rows(cg, rows, L);
    delta = delta.defined() ? add(delta, dp) : dp;
    b = b.defined() ? add(b, bp) : bp;
    c = c.defined() ? add(c, cp) : cp;
  }
  return {delta, b, c};
}

template <class T>
void record_site(RomOutput<T>& out, Proj site, const RoutingDecision<T>& d) {
  out.site_indices[site] = d.indices;
}

}  // namespace detail

// Forward pass of the routed layer. In shared mode one decision (from the
// gate-side router) drives the Conv Proj sum, the Gate Proj sum, and the
// gate-weighted Out Proj sum; the conv kernel and state path are shared. In
// independent mode each expertized projection routes with its own weights.
template <class T>
RomOutput<T> rom_forward(const Tensor<T>& x, const RoMWeights<T>& w, const RouterConfig& cfg,
                         RoutingMode mode, bool training, uint64_t noise_key) {
  w.validate();
  cfg.validate();
  if (cfg.num_experts != w.n_experts)
    throw ContractError("rom_forward: cfg.num_experts " + std::to_string(cfg.num_experts) +
                        " != weights' expert count " + std::to_string(w.n_experts));
  if (x.rank() != 2 || x.dim(1) != w.dims.d_model)
    throw ShapeError("rom_forward: input " + shape_str(x.shape()) + " does not match d_model " +
                     std::to_string(w.dims.d_model));
  const bool inner_routed = w.expertized.contains(Proj::dt) || w.expertized.contains(Proj::x);
  if (inner_routed && cfg.top_k != 1)
    throw ContractError("rom_forward: dt/x expertization requires top_k = 1");
  if (mode == RoutingMode::shared && !w.expertized.contains(Proj::gate))
    throw ContractError("rom_forward: shared mode requires the gate projection to be expertized");

  RomOutput<T> result;
  auto decision_for = [&](Proj p) -> const RoutingDecision<T>& {
    if (mode == RoutingMode::shared) return result.decisions.front().second;
    for (const auto& [site, d] : result.decisions)
      if (site == p) return d;
    throw ContractError("rom_forward: missing decision for projection");
  };

  if (mode == RoutingMode::shared) {
    if (!w.router.w_r.defined())
      throw ContractError("rom_forward: weights carry no shared router (built for independent mode)");
    result.decisions.emplace_back(Proj::gate, route(x, w.router, cfg, training, noise_key));
  } else {
    for (Proj p : {Proj::conv, Proj::gate, Proj::out, Proj::dt, Proj::x})
      if (w.expertized.contains(p)) {
        auto it = w.proj_routers.find(p);
        if (it == w.proj_routers.end())
          throw ContractError(std::string("rom_forward: independent mode lacks a router for ") +
                              proj_name(p));
        const uint64_t key = stream_key({noise_key, static_cast<uint64_t>(p)});
        result.decisions.emplace_back(p, route(x, it->second, cfg, training, key));
      }
  }

  // Gate Proj (unweighted sum over selected experts)
  Tensor<T> g_pre;
  if (w.expertized.contains(Proj::gate)) {
    const auto& d = decision_for(Proj::gate);
    g_pre = detail::routed_sum(x, w.w_g, d);
    detail::record_site(result, Proj::gate, d);
  } else {
    g_pre = matmul(x, w.w_g[0]);
  }
  Tensor<T> gate = silu(g_pre);

  // Conv Proj (same indicator in shared mode)
  Tensor<T> h;
  if (w.expertized.contains(Proj::conv)) {
    const auto& d = decision_for(Proj::conv);
    h = detail::routed_sum(x, w.w_in, d);
    detail::record_site(result, Proj::conv, d);
  } else {
    h = matmul(x, w.w_in[0]);
  }

  // Shared conv + scan path
  Tensor<T> u = silu(depthwise_conv1d_causal(h, w.conv_w, w.conv_b));
  Tensor<T> delta, b, c;
  if (inner_routed) {
    const auto& d = decision_for(w.expertized.contains(Proj::dt) ? Proj::dt : Proj::x);
    std::tie(delta, b, c) = detail::routed_ssm_inputs(u, w, d);
    if (w.expertized.contains(Proj::dt)) detail::record_site(result, Proj::dt, decision_for(Proj::dt));
    if (w.expertized.contains(Proj::x)) detail::record_site(result, Proj::x, decision_for(Proj::x));
  } else {
    SsmInnerWeights<T> inner;
    inner.w_x = w.w_x[0];
    inner.w_dt = w.w_dt[0];
    inner.dt_bias = w.dt_bias[0];
    std::tie(delta, b, c) = ssm_inputs(u, inner, w.dims);
  }
  Tensor<T> a = neg(exp(w.a_log));
  auto [abar, bbar] = discretize_zoh(a, b, delta);
  const Tensor<T>* skip = w.d_skip.defined() ? &w.d_skip : nullptr;
  Tensor<T> y = selective_scan_sequential(u, abar, bbar, c, skip);

  // Out Proj (gate weights applied here only)
  Tensor<T> z = mul(y, gate);
  if (w.expertized.contains(Proj::out)) {
    const auto& d = decision_for(Proj::out);
    result.out = detail::routed_weighted_sum(z, w.w_out, d);
    detail::record_site(result, Proj::out, d);
  } else {
    result.out = matmul(z, w.w_out[0]);
  }
  return result;
}

// The routed layer evaluated literally as full sums over every expert with
// indicator masks: every expert's projection is computed for every token and
// masked. Mathematically identical to rom_forward; the brute-force oracle.
template <class T>
Tensor<T> rom_forward_dense_reference(const Tensor<T>& x, const RoMWeights<T>& w,
                                      const RouterConfig& cfg, RoutingMode mode, bool training,
                                      uint64_t noise_key) {
  w.validate();
  cfg.validate();
  const bool inner_routed = w.expertized.contains(Proj::dt) || w.expertized.contains(Proj::x);
  if (inner_routed && cfg.top_k != 1)
    throw ContractError("rom_forward_dense_reference: dt/x expertization requires top_k = 1");
  if (mode == RoutingMode::shared && !w.expertized.contains(Proj::gate))
    throw ContractError("rom_forward_dense_reference: shared mode requires gate expertization");
  const int64_t L = x.dim(0);
  const int n = w.n_experts;

  std::map<Proj, RoutingDecision<T>> decisions;
  if (mode == RoutingMode::shared) {
    if (!w.router.w_r.defined())
      throw ContractError(
          "rom_forward_dense_reference: weights carry no shared router (built for independent mode)");
    decisions[Proj::gate] = route(x, w.router, cfg, training, noise_key);
  } else {
    for (Proj p : {Proj::conv, Proj::gate, Proj::out, Proj::dt, Proj::x})
      if (w.expertized.contains(p))
        decisions[p] = route(x, w.proj_routers.at(p), cfg, training,
                             stream_key({noise_key, static_cast<uint64_t>(p)}));
  }
  auto decision_for = [&](Proj p) -> const RoutingDecision<T>& {
    return mode == RoutingMode::shared ? decisions.at(Proj::gate) : decisions.at(p);
  };
  auto indicator_column = [&](const RoutingDecision<T>& d, int expert) {
    Tensor<T> m = Tensor<T>::zeros({L});
    for (int64_t t = 0; t < L; ++t)
      for (int j = 0; j < d.top_k; ++j)
        if (d.indices[static_cast<size_t>(t * d.top_k + j)] == expert) m.data()[t] = T(1);
    return m;
  };

  Tensor<T> g_pre;
  if (w.expertized.contains(Proj::gate)) {
    const auto& d = decision_for(Proj::gate);
    for (int e = 0; e < n; ++e) {
      Tensor<T> part = scale_rows(matmul(x, w.w_g[static_cast<size_t>(e)]), indicator_column(d, e));
      g_pre = g_pre.defined() ? add(g_pre, part) : part;
    }
  } else {
    g_pre = matmul(x, w.w_g[0]);
  }
  Tensor<T> gate = silu(g_pre);

  Tensor<T> h;
  if (w.expertized.contains(Proj::conv)) {
    const auto& d = decision_for(Proj::conv);
    for (int e = 0; e < n; ++e) {
      Tensor<T> part = scale_rows(matmul(x, w.w_in[static_cast<size_t>(e)]), indicator_column(d, e));
      h = h.defined() ? add(h, part) : part;
    }
  } else {
    h = matmul(x, w.w_in[0]);
  }

  Tensor<T> u = silu(depthwise_conv1d_causal(h, w.conv_w, w.conv_b));

  Tensor<T> delta, b, c;
  if (inner_routed) {
    const auto& d = decision_for(w.expertized.contains(Proj::dt) ? Proj::dt : Proj::x);
    for (int e = 0; e < n; ++e) {
      SsmInnerWeights<T> inner;
      inner.w_x = w.w_x[w.expertized.contains(Proj::x) ? static_cast<size_t>(e) : 0];
      inner.w_dt = w.w_dt[w.expertized.contains(Proj::dt) ? static_cast<size_t>(e) : 0];
      inner.dt_bias = w.dt_bias[w.expertized.contains(Proj::dt) ? static_cast<size_t>(e) : 0];
      auto [de, be, ce] = ssm_inputs(u, inner, w.dims);
      Tensor<T> mask = indicator_column(d, e);
      Tensor<T> dp = scale_rows(de, mask);
      Tensor<T> bp = scale_rows(be, mask);
      Tensor<T> cp = scale_rows(ce, mask);
      delta = delta.defined() ? add(delta, dp) : dp;
      b = b.defined() ? add(b, bp) : bp;
      c = c.defined() ? add(c, cp) : cp;
    }
  } else {
    SsmInnerWeights<T> inner;
    inner.w_x = w.w_x[0];
    inner.w_dt = w.w_dt[0];
    inner.dt_bias = w.dt_bias[0];
    std::tie(delta, b, c) = ssm_inputs(u, inner, w.dims);
  }
  Tensor<T> a = neg(exp(w.a_log));
  auto [abar, bbar] = discretize_zoh(a, b, delta);
  const Tensor<T>* skip = w.d_skip.defined() ? &w.d_skip : nullptr;
  Tensor<T> y = selective_scan_sequential(u, abar, bbar, c, skip);

  Tensor<T> z = mul(y, gate);
  if (w.expertized.contains(Proj::out)) {
    const auto& d = decision_for(Proj::out);
    // Masked gate matrix [L,N]: R_i(X_t) with inactive experts at zero.
    Tensor<T> masked_gates = scatter_per_row(d.gates, d.indices, n);
    Tensor<T> out;
    for (int e = 0; e < n; ++e) {
      Tensor<T> col = reshape(slice_cols(masked_gates, e, e + 1), {L});
      Tensor<T> part = scale_rows(matmul(z, w.w_out[static_cast<size_t>(e)]), col);
      out = out.defined() ? add(out, part) : part;
    }
    return out;
  }
  return matmul(z, w.w_out[0]);
}

// ---------------------------------------------------------------------------
// SwiGLU FFN mixture
// ---------------------------------------------------------------------------

template <class T>
struct SwiGluWeights {
  Tensor<T> w_gate;  // [D_m, D_f]
  Tensor<T> w_up;    // [D_m, D_f]
  Tensor<T> w_down;  // [D_f, D_m]
};

template <class T>
SwiGluWeights<T> init_swiglu(int64_t d_model, int64_t d_ff, Rng& rng) {
  SwiGluWeights<T> w;
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  w.w_gate = init_uniform<T>({d_model, d_ff}, rng, in_bound);
  w.w_up = init_uniform<T>({d_model, d_ff}, rng, in_bound);
  w.w_down = init_uniform<T>({d_ff, d_model}, rng, 1.0 / std::sqrt(static_cast<double>(d_ff)));
  return w;
}

template <class T>
Tensor<T> swiglu_forward(const Tensor<T>& x, const SwiGluWeights<T>& w) {
  return matmul(mul(silu(matmul(x, w.w_gate)), matmul(x, w.w_up)), w.w_down);
}

template <class T>
struct FfnMoeWeights {
  int n_experts = 1;
  std::vector<SwiGluWeights<T>> experts;
  RouterWeights<T> router;    // undefined when routing decisions are reused
  bool reuse_router = false;  // take the decision from the preceding RoM layer

  void validate() const {
    if (static_cast<int>(experts.size()) != n_experts)
      throw ContractError("FfnMoeWeights: expert count mismatch");
    if (!reuse_router && !router.w_r.defined())
      throw ContractError("FfnMoeWeights: missing router");
  }
};

template <class T>
FfnMoeWeights<T> init_ffn_moe(int64_t d_model, int64_t d_ff, int n_experts, bool reuse_router,
                              uint64_t seed) {
  Rng rng(seed);
  FfnMoeWeights<T> w;
  w.n_experts = n_experts;
  w.reuse_router = reuse_router;
  for (int i = 0; i < n_experts; ++i) w.experts.push_back(init_swiglu<T>(d_model, d_ff, rng));
  if (!reuse_router)
    w.router.w_r =
        init_uniform<T>({d_model, n_experts}, rng, 1.0 / std::sqrt(static_cast<double>(d_model)));
  return w;
}

template <class T>
struct FfnMoeOutput {
  Tensor<T> out;
  RoutingDecision<T> decision;  // the decision actually used (own or reused)
  bool own_decision = false;
};

// out_t = sum_{i in S_t} gate_i(t) * f_i(x_t) with f_i a SwiGLU expert.
// Routing comes from the layer's own router or from a supplied decision.
template <class T>
FfnMoeOutput<T> ffn_moe_forward(const Tensor<T>& x, const FfnMoeWeights<T>& w,
                                const RouterConfig& cfg, bool training, uint64_t noise_key,
                                const RoutingDecision<T>* shared_decision = nullptr) {
  w.validate();
  cfg.validate();
  if (cfg.num_experts != w.n_experts)
    throw ContractError("ffn_moe_forward: cfg.num_experts != weights' expert count");
  FfnMoeOutput<T> result;
  if (w.reuse_router) {
    if (shared_decision == nullptr)
      throw ContractError("ffn_moe_forward: router reuse requires a shared decision");
    result.decision = *shared_decision;
  } else {
    result.decision = route(x, w.router, cfg, training, noise_key);
    result.own_decision = true;
  }
  const RoutingDecision<T>& d = result.decision;
  if (d.tokens() != x.dim(0))
    throw ContractError("ffn_moe_forward: decision covers " + std::to_string(d.tokens()) +
                        " tokens, input has " + std::to_string(x.dim(0)));

  std::vector<Tensor<T>> groups = dispatch_by_expert(x, d);
  std::vector<Tensor<T>> outs(groups.size());
  for (int e = 0; e < d.num_experts; ++e)
    if (groups[static_cast<size_t>(e)].defined())
      outs[static_cast<size_t>(e)] =
          swiglu_forward(groups[static_cast<size_t>(e)], w.experts[static_cast<size_t>(e)]);
  result.out = combine(outs, d, /*apply_gates=*/true);
  return result;
}

// Dense-masked oracle for the FFN mixture.
template <class T>
Tensor<T> ffn_moe_forward_dense_reference(const Tensor<T>& x, const FfnMoeWeights<T>& w,
                                          const RouterConfig& cfg, bool training, uint64_t noise_key,
                                          const RoutingDecision<T>* shared_decision = nullptr) {
  w.validate();
  cfg.validate();
  RoutingDecision<T> own;
  const RoutingDecision<T>* d = shared_decision;
  if (!w.reuse_router) {
    own = route(x, w.router, cfg, training, noise_key);
    d = &own;
  } else if (d == nullptr) {
    throw ContractError("ffn_moe_forward_dense_reference: router reuse requires a shared decision");
  }
  const int64_t L = x.dim(0);
  Tensor<T> masked_gates = scatter_per_row(d->gates, d->indices, d->num_experts);
  Tensor<T> out;
  for (int e = 0; e < d->num_experts; ++e) {
    Tensor<T> col = reshape(slice_cols(masked_gates, e, e + 1), {L});
    Tensor<T> part = scale_rows(swiglu_forward(x, w.experts[static_cast<size_t>(e)]), col);
    out = out.defined() ? add(out, part) : part;
  }
  return out;
}

}  // namespace rom
