#pragma once

// Closed-form parameter and FLOP accounting from a ModelConfig. No model is
// constructed; counts are exact integers and additive over layers.
//
// Conventions: one multiply-accumulate is 2 FLOPs; activations and norms are
// excluded (projection-dominated counts); the depthwise conv costs 2*k per
// channel and the scan 6*D_e*D_s per token (discretize, update, readout);
// routing costs 2*D_m*N per router; attention pair costs are window-bounded
// and counted exactly per position.

#include <cstdint>
#include <string>
#include <vector>

#include "rom/config.hpp"

namespace rom {

struct LayerCost {
  int64_t layer = -1;  // -1 marks the embedding/head entry
  char kind = '?';
  int64_t total_params = 0;
  int64_t active_params = 0;  // parameters touched per token at the configured K
  int64_t flops = 0;          // forward FLOPs over the whole sequence
};

struct CostReport {
  int64_t total_params = 0;
  int64_t active_params = 0;
  int64_t flops = 0;
  int64_t seq_len = 0;  // 0 when only parameters were counted
  std::vector<LayerCost> per_layer;
};

CostReport count_params(const ModelConfig& cfg);
CostReport count_flops(const ModelConfig& cfg, int64_t seq_len);

std::string format_cost_report(const CostReport& r, bool per_layer);
std::string human_count(int64_t n);  // 115096320 -> "115.1M"

}  // namespace rom
