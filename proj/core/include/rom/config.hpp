#pragma once

// Model / training configuration and the key = value config file format.
// One file drives building, counting, training, and evaluation.

#include <string>
#include <vector>

#include "rom/rom_layer.hpp"

namespace rom {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Layer kinds in a pattern string:
//   M mamba, R routed mamba, A sliding-window attention, F SwiGLU MLP,
//   E SwiGLU FFN mixture.
struct ModelConfig {
  int64_t vocab_size = 256;
  int64_t d_model = 0;
  int64_t n_layers = 0;
  std::string pattern = "M";
  MambaDims dims;  // zeroed fields fall back to defaults derived from d_model
  RouterConfig router;
  ExpertizedSet expertized = ExpertizedSet::of({Proj::conv, Proj::gate, Proj::out});
  RoutingMode routing_mode = RoutingMode::shared;
  int64_t swa_window = 2048;
  double ffn_mult = 4.0;
  bool tie_embeddings = true;
  double norm_eps = 1e-5;
  int64_t dense_tail_layers = 0;
  bool use_d_skip = true;
  bool moe_reuse_router = false;  // E layers take the previous R layer's decision

  int64_t d_ff() const { return static_cast<int64_t>(std::llround(ffn_mult * static_cast<double>(d_model))); }
  int n_heads() const { return static_cast<int>(std::max<int64_t>(1, d_model / 64)); }

  MambaDims effective_dims() const {
    MambaDims d = dims;
    d.d_model = d_model;
    if (d.d_expand == 0) d.d_expand = 2 * d_model;
    if (d.d_state == 0) d.d_state = 16;
    if (d.dt_rank == 0) d.dt_rank = std::max<int64_t>(1, d_model / 16);
    if (d.conv_kernel == 0) d.conv_kernel = 4;
    return d;
  }

  // Layer kind after the dense-tail substitution (R -> M, E -> F).
  char layer_kind(int64_t layer) const {
    char k = pattern[static_cast<size_t>(layer % static_cast<int64_t>(pattern.size()))];
    if (layer >= n_layers - dense_tail_layers) {
      if (k == 'R') k = 'M';
      if (k == 'E') k = 'F';
    }
    return k;
  }

  void validate() const;
};

struct TrainConfig {
  double peak_lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global L2
  double warmup_ratio = 0.01;
  int64_t total_tokens = 0;
  int64_t batch_tokens = 0;
  int64_t seq_len = 0;
  uint64_t seed = 0;
  std::string dtype = "f32";  // f32 | f64
  int64_t log_interval = 50;
  int64_t checkpoint_interval = 0;  // 0: final checkpoint only
  int64_t eval_interval = 0;        // 0: eval at the end only
  int64_t eval_tokens = 65536;      // validation tokens per eval
  std::string corpus_path;
  double val_fraction = 0.1;

  int64_t total_steps() const {
    return batch_tokens > 0 ? (total_tokens + batch_tokens - 1) / batch_tokens : 0;
  }
  int64_t warmup_steps() const {
    return std::max<int64_t>(1, std::llround(warmup_ratio * static_cast<double>(total_steps())));
  }

  void validate() const;
};

struct FileConfig {
  int version = 1;
  ModelConfig model;
  TrainConfig train;
};

// Parses a key = value config file ('#' starts a comment). Unknown keys fail
// with the nearest valid key named in the error.
FileConfig parse_config_file(const std::string& path);
FileConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");

// Key-by-key schema, printable from the CLI.
std::string config_schema();

}  // namespace rom
