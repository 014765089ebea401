#pragma once

// Full language models from layer-pattern configurations: embedding, a stack
// of pre-norm residual layers (Mamba / routed Mamba / sliding-window
// attention / SwiGLU MLP / FFN mixture), final norm, and a tied or separate
// output head.

#include <span>

#include "rom/attention.hpp"
#include "rom/config.hpp"
#include "rom/rom_layer.hpp"

namespace rom {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool weight_decay = true;
};

template <class T>
class ParamRegistry {
 public:
  void add(std::string name, Tensor<T> t, bool decay) {
    t.set_requires_grad(true);
    items_.push_back(NamedParam<T>{std::move(name), std::move(t), decay});
  }
  const std::vector<NamedParam<T>>& items() const { return items_; }
  std::vector<NamedParam<T>>& items() { return items_; }
  size_t count() const { return items_.size(); }
  int64_t numel() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }
  Tensor<T> find(const std::string& name) const {
    for (const auto& p : items_)
      if (p.name == name) return p.tensor;
    throw ContractError("ParamRegistry: no parameter named '" + name + "'");
  }
  void zero_grads() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::vector<NamedParam<T>> items_;
};

template <class T>
struct FfnWeights {
  SwiGluWeights<T> block;
};

template <class T>
struct LayerWeights {
  char kind = 'M';
  Tensor<T> norm_w;
  std::optional<MambaWeights<T>> mamba;
  std::optional<RoMWeights<T>> rom;
  std::optional<AttnWeights<T>> attn;
  std::optional<FfnWeights<T>> ffn;
  std::optional<FfnMoeWeights<T>> ffn_moe;
  int64_t reuse_from = -1;  // E with router reuse: index of the source R layer
};

template <class T>
struct LanguageModel {
  ModelConfig cfg;
  Tensor<T> embedding;  // [V, D_m]
  Tensor<T> head;       // [D_m, V]; undefined when tied
  std::vector<LayerWeights<T>> layers;
  Tensor<T> final_norm_w;
  ParamRegistry<T> params;
};

namespace detail {

// Weight decay exempts norms, biases, A_log, dt bias, and router weights.
inline bool decays(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const size_t n = std::string(suffix).size();
    return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
  };
  if (ends_with("norm") || ends_with("conv_b") || ends_with("a_log") || ends_with("d_skip"))
    return false;
  if (name.find("dt_bias") != std::string::npos) return false;
  if (name.find("router") != std::string::npos) return false;
  return true;
}

template <class T>
void register_mamba(ParamRegistry<T>& reg, const std::string& prefix, MambaWeights<T>& w) {
  auto add = [&](const char* field, Tensor<T>& t) {
    if (t.defined()) reg.add(prefix + field, t, decays(prefix + field));
  };
  add("w_in", w.w_in);
  add("w_g", w.w_g);
  add("conv_w", w.conv_w);
  add("conv_b", w.conv_b);
  add("w_x", w.inner.w_x);
  add("w_dt", w.inner.w_dt);
  add("dt_bias", w.inner.dt_bias);
  add("a_log", w.inner.a_log);
  add("d_skip", w.inner.d_skip);
  add("w_out", w.w_out);
}

template <class T>
void register_rom(ParamRegistry<T>& reg, const std::string& prefix, RoMWeights<T>& w) {
  auto add = [&](const std::string& field, Tensor<T>& t) {
    if (t.defined()) reg.add(prefix + field, t, decays(prefix + field));
  };
  auto add_group = [&](const char* field, std::vector<Tensor<T>>& ts) {
    for (size_t e = 0; e < ts.size(); ++e) add(std::string(field) + "." + std::to_string(e), ts[e]);
  };
  add_group("w_in", w.w_in);
  add_group("w_g", w.w_g);
  add_group("w_out", w.w_out);
  add_group("w_x", w.w_x);
  add_group("w_dt", w.w_dt);
  add_group("dt_bias", w.dt_bias);
  add("conv_w", w.conv_w);
  add("conv_b", w.conv_b);
  add("a_log", w.a_log);
  add("d_skip", w.d_skip);
  add("router", w.router.w_r);
  for (auto& [p, r] : w.proj_routers) add(std::string("router_") + proj_name(p), r.w_r);
}

}  // namespace detail

template <class T>
LanguageModel<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  LanguageModel<T> m;
  m.cfg = cfg;
  const MambaDims dims = cfg.effective_dims();
  const int64_t dm = cfg.d_model;

  {
    Rng rng(stream_key({seed, 0xe86bedull}));
    std::vector<T> e(static_cast<size_t>(cfg.vocab_size * dm));
    for (auto& v : e) v = static_cast<T>(0.02 * rng.normal());
    m.embedding = Tensor<T>::from_vector({cfg.vocab_size, dm}, std::move(e));
    m.params.add("embed", m.embedding, true);
  }

  const int64_t plen = static_cast<int64_t>(cfg.pattern.size());
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    LayerWeights<T> layer;
    layer.kind = cfg.layer_kind(i);
    layer.norm_w = Tensor<T>::full({dm}, T(1));
    const std::string prefix = "layers." + std::to_string(i) + ".";
    m.params.add(prefix + "norm", layer.norm_w, false);
    const uint64_t lseed = stream_key({seed, static_cast<uint64_t>(i) + 1});

    switch (layer.kind) {
      case 'M': {
        layer.mamba = init_mamba_weights<T>(dims, lseed, cfg.use_d_skip);
        detail::register_mamba(m.params, prefix + "mamba.", *layer.mamba);
        break;
      }
      case 'R': {
        layer.rom = init_rom_weights<T>(dims, cfg.router.num_experts, cfg.expertized,
                                        cfg.routing_mode, lseed, cfg.use_d_skip);
        detail::register_rom(m.params, prefix + "rom.", *layer.rom);
        break;
      }
      case 'A': {
        layer.attn = init_attn_weights<T>(dm, cfg.n_heads(), lseed);
        m.params.add(prefix + "attn.w_q", layer.attn->w_q, true);
        m.params.add(prefix + "attn.w_k", layer.attn->w_k, true);
        m.params.add(prefix + "attn.w_v", layer.attn->w_v, true);
        m.params.add(prefix + "attn.w_o", layer.attn->w_o, true);
        break;
      }
      case 'F': {
        Rng rng(lseed);
        layer.ffn = FfnWeights<T>{init_swiglu<T>(dm, cfg.d_ff(), rng)};
        m.params.add(prefix + "ffn.w_gate", layer.ffn->block.w_gate, true);
        m.params.add(prefix + "ffn.w_up", layer.ffn->block.w_up, true);
        m.params.add(prefix + "ffn.w_down", layer.ffn->block.w_down, true);
        break;
      }
      case 'E': {
        layer.ffn_moe = init_ffn_moe<T>(dm, cfg.d_ff(), cfg.router.num_experts,
                                        cfg.moe_reuse_router, lseed);
        for (int e = 0; e < cfg.router.num_experts; ++e) {
          const std::string ep = prefix + "moe." + std::to_string(e) + ".";
          m.params.add(ep + "w_gate", layer.ffn_moe->experts[static_cast<size_t>(e)].w_gate, true);
          m.params.add(ep + "w_up", layer.ffn_moe->experts[static_cast<size_t>(e)].w_up, true);
          m.params.add(ep + "w_down", layer.ffn_moe->experts[static_cast<size_t>(e)].w_down, true);
        }
        if (!cfg.moe_reuse_router)
          m.params.add(prefix + "moe.router", layer.ffn_moe->router.w_r, false);
        if (cfg.moe_reuse_router) {
          for (int64_t j = i - i % plen; j < i; ++j)
            if (cfg.layer_kind(j) == 'R') layer.reuse_from = j;
          if (layer.reuse_from < 0)
            throw ConfigError("build_model: layer " + std::to_string(i) +
                              " reuses routing but has no preceding R layer in its repeat");
        }
        break;
      }
      default:
        throw ConfigError(std::string("build_model: unknown layer kind ") + layer.kind);
    }
    m.layers.push_back(std::move(layer));
  }

  m.final_norm_w = Tensor<T>::full({dm}, T(1));
  m.params.add("final_norm", m.final_norm_w, false);
  if (!cfg.tie_embeddings) {
    Rng rng(stream_key({seed, 0x6ea9ull}));
    m.head = init_uniform<T>({dm, cfg.vocab_size}, rng, 1.0 / std::sqrt(static_cast<double>(dm)));
    m.params.add("head", m.head, true);
  }
  return m;
}

template <class T>
struct LayerRouting {
  int64_t layer = 0;
  char kind = 'R';
  std::vector<std::pair<Proj, RoutingDecision<T>>> decisions;
  bool own = true;  // false when the decision was reused from an R layer
};

template <class T>
struct LmOutput {
  Tensor<T> logits;  // [L, vocab]
  Tensor<T> balance;  // alpha-scaled balance loss; undefined when disabled
  std::vector<LayerRouting<T>> routing;
};

// Next-token logits for one token sequence. The cross-entropy target is the
// sequence shifted by one; callers slice the logits accordingly.
template <class T>
LmOutput<T> lm_forward(const LanguageModel<T>& m, std::span<const int32_t> tokens, bool training,
                       uint64_t seed, int64_t step = 0) {
  const ModelConfig& cfg = m.cfg;
  LmOutput<T> out;
  Tensor<T> x = embedding(std::vector<int32_t>(tokens.begin(), tokens.end()), m.embedding);
  const T eps = static_cast<T>(cfg.norm_eps);

  const int64_t plen = static_cast<int64_t>(cfg.pattern.size());
  const RoutingDecision<T>* repeat_decision = nullptr;
  std::vector<RoutingDecision<T>> kept;  // stable storage for reuse within a repeat
  kept.reserve(m.layers.size());

  for (size_t i = 0; i < m.layers.size(); ++i) {
    if (static_cast<int64_t>(i) % plen == 0) repeat_decision = nullptr;
    const LayerWeights<T>& layer = m.layers[i];
    Tensor<T> normed = rmsnorm(x, layer.norm_w, eps);
    const uint64_t key = stream_key({seed, static_cast<uint64_t>(step), static_cast<uint64_t>(i)});
    Tensor<T> y;
    switch (layer.kind) {
      case 'M':
        y = mamba_forward(normed, *layer.mamba);
        break;
      case 'R': {
        RomOutput<T> r = rom_forward(normed, *layer.rom, cfg.router, cfg.routing_mode, training, key);
        y = r.out;
        if (cfg.routing_mode == RoutingMode::shared) {
          kept.push_back(r.decisions.front().second);
          repeat_decision = &kept.back();
        }
        out.routing.push_back(LayerRouting<T>{static_cast<int64_t>(i), 'R',
                                              std::move(r.decisions), true});
        break;
      }
      case 'A':
        y = swa_forward(normed, *layer.attn, cfg.swa_window);
        break;
      case 'F':
        y = swiglu_forward(normed, layer.ffn->block);
        break;
      case 'E': {
        const RoutingDecision<T>* shared = nullptr;
        if (layer.ffn_moe->reuse_router) {
          if (repeat_decision == nullptr)
            throw ContractError("lm_forward: layer " + std::to_string(i) +
                                " reuses routing but no R decision is available");
          shared = repeat_decision;
        }
        FfnMoeOutput<T> r = ffn_moe_forward(normed, *layer.ffn_moe, cfg.router, training, key, shared);
        y = r.out;
        out.routing.push_back(LayerRouting<T>{static_cast<int64_t>(i), 'E',
                                              {{Proj::gate, std::move(r.decision)}},
                                              r.own_decision});
        break;
      }
      default:
        throw ContractError("lm_forward: unknown layer kind");
    }
    x = add(x, y);
  }

  x = rmsnorm(x, m.final_norm_w, eps);
  out.logits = cfg.tie_embeddings ? matmul_nt(x, m.embedding) : matmul(x, m.head);

  if (cfg.router.balance_alpha > 0) {
    std::vector<Tensor<T>> probs;
    std::vector<const std::vector<int32_t>*> indices;
    for (const auto& lr : out.routing) {
      if (!lr.own) continue;  // reused decisions are not counted twice
      for (const auto& [p, d] : lr.decisions) {
        probs.push_back(d.probs);
        indices.push_back(&d.indices);
      }
    }
    if (!probs.empty()) out.balance = balance_loss(probs, indices, cfg.router);
  }
  return out;
}

}  // namespace rom
