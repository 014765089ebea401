#include "rom/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rom {

namespace {

struct ProjSizes {
  int64_t conv = 0;  // Conv Proj (W_in)
  int64_t gate = 0;  // Gate Proj (W_g)
  int64_t out = 0;   // Out Proj (W_out)
  int64_t x = 0;     // x Proj (W_x)
  int64_t dt = 0;    // dt Proj (W_dt + bias)
};

ProjSizes proj_sizes(const MambaDims& d) {
  ProjSizes s;
  s.conv = d.d_model * d.d_expand;
  s.gate = d.d_model * d.d_expand;
  s.out = d.d_expand * d.d_model;
  s.x = d.d_expand * (d.dt_rank + 2 * d.d_state);
  s.dt = d.dt_rank * d.d_expand + d.d_expand;
  return s;
}

int64_t expertized_param_sum(const ModelConfig& cfg, const MambaDims& d) {
  const ProjSizes s = proj_sizes(d);
  int64_t sum = 0;
  if (cfg.expertized.contains(Proj::conv)) sum += s.conv;
  if (cfg.expertized.contains(Proj::gate)) sum += s.gate;
  if (cfg.expertized.contains(Proj::out)) sum += s.out;
  if (cfg.expertized.contains(Proj::x)) sum += s.x;
  if (cfg.expertized.contains(Proj::dt)) sum += s.dt;
  return sum;
}

// Dense Mamba layer parameters, excluding the pre-norm weight.
int64_t mamba_params(const ModelConfig& cfg, const MambaDims& d) {
  const ProjSizes s = proj_sizes(d);
  int64_t p = s.conv + s.gate + s.out + s.x + s.dt;
  p += d.d_expand * d.d_state;            // A_log
  p += d.conv_kernel * d.d_expand + d.d_expand;  // conv kernel + bias
  if (cfg.use_d_skip) p += d.d_expand;
  return p;
}

int64_t router_count(const ModelConfig& cfg) {
  if (cfg.routing_mode == RoutingMode::shared) return 1;
  int64_t c = 0;
  for (Proj p : {Proj::conv, Proj::gate, Proj::out, Proj::dt, Proj::x})
    if (cfg.expertized.contains(p)) ++c;
  return c;
}

// Per-token forward FLOPs of the dense Mamba compute path.
int64_t mamba_flops_per_token(const MambaDims& d) {
  const ProjSizes s = proj_sizes(d);
  int64_t f = 2 * (s.conv + s.gate + s.out + s.x + d.dt_rank * d.d_expand);
  f += 2 * d.conv_kernel * d.d_expand;  // depthwise conv
  f += 6 * d.d_expand * d.d_state;      // discretize, update, readout
  return f;
}

int64_t expertized_flops_per_token(const ModelConfig& cfg, const MambaDims& d) {
  const ProjSizes s = proj_sizes(d);
  int64_t f = 0;
  if (cfg.expertized.contains(Proj::conv)) f += 2 * s.conv;
  if (cfg.expertized.contains(Proj::gate)) f += 2 * s.gate;
  if (cfg.expertized.contains(Proj::out)) f += 2 * s.out;
  if (cfg.expertized.contains(Proj::x)) f += 2 * s.x;
  if (cfg.expertized.contains(Proj::dt)) f += 2 * d.dt_rank * d.d_expand;
  return f;
}

// Exact visible-span sum for windowed causal attention.
int64_t attention_pair_sum(int64_t seq_len, int64_t window) {
  const int64_t ramp = std::min(seq_len, window);
  int64_t pairs = ramp * (ramp + 1) / 2;
  if (seq_len > window) pairs += (seq_len - window) * window;
  return pairs;
}

LayerCost cost_for_layer(const ModelConfig& cfg, int64_t layer, int64_t seq_len) {
  const MambaDims d = cfg.effective_dims();
  const int64_t dm = cfg.d_model;
  const int64_t n = cfg.router.num_experts;
  const int64_t k = cfg.router.top_k;
  LayerCost c;
  c.layer = layer;
  c.kind = cfg.layer_kind(layer);
  int64_t per_token_flops = 0;

  switch (c.kind) {
    case 'M': {
      c.total_params = mamba_params(cfg, d);
      c.active_params = c.total_params;
      per_token_flops = mamba_flops_per_token(d);
      break;
    }
    case 'R': {
      const int64_t dense = mamba_params(cfg, d);
      const int64_t routers = router_count(cfg) * dm * n;
      c.total_params = dense + (n - 1) * expertized_param_sum(cfg, d) + routers;
      c.active_params = dense + (k - 1) * expertized_param_sum(cfg, d) + routers;
      per_token_flops = mamba_flops_per_token(d) +
                        (k - 1) * expertized_flops_per_token(cfg, d) +
                        router_count(cfg) * 2 * dm * n;
      break;
    }
    case 'A': {
      c.total_params = 4 * dm * dm;
      c.active_params = c.total_params;
      per_token_flops = 2 * 4 * dm * dm;  // window term added below
      break;
    }
    case 'F': {
      c.total_params = 3 * dm * cfg.d_ff();
      c.active_params = c.total_params;
      per_token_flops = 2 * 3 * dm * cfg.d_ff();
      break;
    }
    case 'E': {
      const int64_t expert = 3 * dm * cfg.d_ff();
      const int64_t router = cfg.moe_reuse_router ? 0 : dm * n;
      c.total_params = n * expert + router;
      c.active_params = k * expert + router;
      per_token_flops = k * 2 * expert + (cfg.moe_reuse_router ? 0 : 2 * dm * n);
      break;
    }
    default:
      break;
  }
  c.total_params += dm;   // pre-norm weight
  c.active_params += dm;
  c.flops = per_token_flops * seq_len;
  if (c.kind == 'A') c.flops += 4 * dm * attention_pair_sum(seq_len, cfg.swa_window);
  return c;
}

CostReport count(const ModelConfig& cfg, int64_t seq_len) {
  cfg.validate();
  CostReport r;
  r.seq_len = seq_len;
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    LayerCost c = cost_for_layer(cfg, i, seq_len);
    r.total_params += c.total_params;
    r.active_params += c.active_params;
    r.flops += c.flops;
    r.per_layer.push_back(c);
  }
  LayerCost emb;
  emb.kind = 'V';
  emb.total_params = cfg.vocab_size * cfg.d_model  // embedding
                     + cfg.d_model                 // final norm
                     + (cfg.tie_embeddings ? 0 : cfg.d_model * cfg.vocab_size);
  emb.active_params = emb.total_params;
  emb.flops = 2 * cfg.d_model * cfg.vocab_size * seq_len;  // output head
  r.total_params += emb.total_params;
  r.active_params += emb.active_params;
  r.flops += emb.flops;
  r.per_layer.push_back(emb);
  return r;
}

}  // namespace

CostReport count_params(const ModelConfig& cfg) { return count(cfg, 0); }

CostReport count_flops(const ModelConfig& cfg, int64_t seq_len) {
  if (seq_len < 1) throw ContractError("count_flops: seq_len must be >= 1");
  return count(cfg, seq_len);
}

std::string human_count(int64_t n) {
  std::ostringstream os;
  const double v = static_cast<double>(n);
  auto fmt = [&](double x, const char* suffix) {
    os.setf(std::ios::fixed);
    os.precision(x >= 100 ? 0 : (x >= 10 ? 1 : 2));
    os << x << suffix;
  };
  if (v >= 1e12)
    fmt(v / 1e12, "T");
  else if (v >= 1e9)
    fmt(v / 1e9, "B");
  else if (v >= 1e6)
    fmt(v / 1e6, "M");
  else if (v >= 1e3)
    fmt(v / 1e3, "K");
  else
    os << n;
  return os.str();
}

std::string format_cost_report(const CostReport& r, bool per_layer) {
  std::ostringstream os;
  if (per_layer) {
    for (const auto& c : r.per_layer) {
      if (c.layer >= 0)
        os << "layer " << c.layer << " (" << c.kind << ")";
      else
        os << "embedding/head";
      os << "  total=" << c.total_params << "  active=" << c.active_params;
      if (r.seq_len > 0) os << "  flops=" << c.flops;
      os << "\n";
    }
  }
  os << "total_params  " << r.total_params << " (" << human_count(r.total_params) << ")\n";
  os << "active_params " << r.active_params << " (" << human_count(r.active_params) << ")\n";
  if (r.seq_len > 0)
    os << "forward_flops " << r.flops << " (" << human_count(r.flops) << ", seq_len=" << r.seq_len
       << ")\n";
  return os.str();
}

}  // namespace rom
