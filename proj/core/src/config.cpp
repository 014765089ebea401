#include "rom/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace rom {

void ModelConfig::validate() const {
  if (d_model < 1) throw ConfigError("model: d_model must be positive");
  if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
  if (n_layers < 1) throw ConfigError("model: n_layers must be positive");
  if (pattern.empty()) throw ConfigError("model: pattern must not be empty");
  for (char c : pattern)
    if (c != 'M' && c != 'R' && c != 'A' && c != 'F' && c != 'E')
      throw ConfigError(std::string("model: pattern character '") + c +
                        "' is not one of M, R, A, F, E");
  if (n_layers % static_cast<int64_t>(pattern.size()) != 0)
    throw ConfigError("model: pattern length " + std::to_string(pattern.size()) +
                      " does not divide n_layers " + std::to_string(n_layers));
  if (swa_window < 1) throw ConfigError("model: swa_window must be >= 1");
  if (dense_tail_layers < 0) throw ConfigError("model: dense_tail_layers must be >= 0");
  if (ffn_mult <= 0) throw ConfigError("model: ffn_mult must be positive");
  effective_dims().validate();
  router.validate();
  const bool has_routed = pattern.find('R') != std::string::npos ||
                          pattern.find('E') != std::string::npos;
  if (has_routed && router.num_experts < 1)
    throw ConfigError("model: routed layers need num_experts >= 1");
  if (pattern.find('A') != std::string::npos) {
    const int64_t hd = d_model / n_heads();
    if (d_model % n_heads() != 0 || hd % 2 != 0)
      throw ConfigError("model: d_model must split into even-dimension attention heads");
  }
  if (moe_reuse_router) {
    // Every E layer (post tail substitution) needs a preceding R in its repeat.
    const int64_t plen = static_cast<int64_t>(pattern.size());
    for (int64_t i = 0; i < n_layers; ++i) {
      if (layer_kind(i) != 'E') continue;
      bool found = false;
      for (int64_t j = i - i % plen; j < i; ++j)
        if (layer_kind(j) == 'R') found = true;
      if (!found)
        throw ConfigError("model: layer " + std::to_string(i) +
                          " reuses routing but no R layer precedes it in its pattern repeat");
    }
  }
}

void TrainConfig::validate() const {
  if (total_tokens < 1) throw ConfigError("train: total_tokens must be positive");
  if (batch_tokens < 1) throw ConfigError("train: batch_tokens must be positive");
  if (seq_len < 2) throw ConfigError("train: seq_len must be >= 2");
  if (batch_tokens % seq_len != 0)
    throw ConfigError("train: batch_tokens " + std::to_string(batch_tokens) +
                      " not divisible by seq_len " + std::to_string(seq_len));
  if (dtype != "f32" && dtype != "f64")
    throw ConfigError("train: dtype must be f32 or f64, got '" + dtype + "'");
  if (peak_lr <= 0 || warmup_ratio < 0 || warmup_ratio > 1)
    throw ConfigError("train: peak_lr must be positive and warmup_ratio within [0,1]");
  if (val_fraction <= 0 || val_fraction >= 1)
    throw ConfigError("train: val_fraction must be in (0,1)");
  if (weight_decay < 0 || grad_clip <= 0) throw ConfigError("train: bad weight_decay/grad_clip");
}

namespace {

struct Field {
  const char* key;
  const char* doc;
  std::function<void(FileConfig&, const std::string&)> set;
};

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

ExpertizedSet parse_expertized(const std::string& v) {
  ExpertizedSet s;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    if (item == "conv")
      s.insert(Proj::conv);
    else if (item == "gate")
      s.insert(Proj::gate);
    else if (item == "out")
      s.insert(Proj::out);
    else if (item == "dt")
      s.insert(Proj::dt);
    else if (item == "x")
      s.insert(Proj::x);
    else
      throw ConfigError("config: expertized entry '" + item +
                        "' is not one of conv, gate, out, dt, x");
  }
  return s;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"version", "config schema version (currently 1)",
       [](FileConfig& c, const std::string& v) {
         c.version = static_cast<int>(to_int("version", v));
         if (c.version != 1)
           throw ConfigError("config: unsupported version " + std::to_string(c.version));
       }},
      {"vocab_size", "token vocabulary size (byte-level corpora use 256)",
       [](FileConfig& c, const std::string& v) { c.model.vocab_size = to_int("vocab_size", v); }},
      {"d_model", "model width D_m",
       [](FileConfig& c, const std::string& v) { c.model.d_model = to_int("d_model", v); }},
      {"n_layers", "layer count; pattern length must divide it",
       [](FileConfig& c, const std::string& v) { c.model.n_layers = to_int("n_layers", v); }},
      {"pattern", "repeating layer pattern over M, R, A, F, E",
       [](FileConfig& c, const std::string& v) { c.model.pattern = v; }},
      {"d_expand", "inner width D_e (default 2*d_model)",
       [](FileConfig& c, const std::string& v) { c.model.dims.d_expand = to_int("d_expand", v); }},
      {"d_state", "state size D_s per channel (default 16)",
       [](FileConfig& c, const std::string& v) { c.model.dims.d_state = to_int("d_state", v); }},
      {"dt_rank", "dt projection rank (default max(1, d_model/16))",
       [](FileConfig& c, const std::string& v) { c.model.dims.dt_rank = to_int("dt_rank", v); }},
      {"conv_kernel", "depthwise conv kernel size (default 4)",
       [](FileConfig& c, const std::string& v) { c.model.dims.conv_kernel = to_int("conv_kernel", v); }},
      {"num_experts", "experts per routed layer",
       [](FileConfig& c, const std::string& v) {
         c.model.router.num_experts = static_cast<int>(to_int("num_experts", v));
       }},
      {"top_k", "experts activated per token",
       [](FileConfig& c, const std::string& v) {
         c.model.router.top_k = static_cast<int>(to_int("top_k", v));
       }},
      {"renormalize", "renormalize gate weights over the selected K",
       [](FileConfig& c, const std::string& v) {
         c.model.router.renormalize = to_bool("renormalize", v);
       }},
      {"jitter_eps", "multiplicative router logit noise during training",
       [](FileConfig& c, const std::string& v) {
         c.model.router.jitter_eps = to_double("jitter_eps", v);
       }},
      {"balance_alpha", "load-balance loss coefficient (0 disables)",
       [](FileConfig& c, const std::string& v) {
         c.model.router.balance_alpha = to_double("balance_alpha", v);
       }},
      {"expertized", "comma list from conv, gate, out, dt, x",
       [](FileConfig& c, const std::string& v) { c.model.expertized = parse_expertized(v); }},
      {"routing_mode", "shared | independent",
       [](FileConfig& c, const std::string& v) {
         if (v == "shared")
           c.model.routing_mode = RoutingMode::shared;
         else if (v == "independent")
           c.model.routing_mode = RoutingMode::independent;
         else
           throw ConfigError("config: routing_mode must be shared or independent, got '" + v + "'");
       }},
      {"swa_window", "sliding attention window size",
       [](FileConfig& c, const std::string& v) { c.model.swa_window = to_int("swa_window", v); }},
      {"ffn_mult", "MLP width multiplier; D_f = ffn_mult * d_model",
       [](FileConfig& c, const std::string& v) { c.model.ffn_mult = to_double("ffn_mult", v); }},
      {"tie_embeddings", "share weights between embedding and output head",
       [](FileConfig& c, const std::string& v) {
         c.model.tie_embeddings = to_bool("tie_embeddings", v);
       }},
      {"norm_eps", "RMSNorm epsilon",
       [](FileConfig& c, const std::string& v) { c.model.norm_eps = to_double("norm_eps", v); }},
      {"dense_tail_layers", "force the last N layers dense (R->M, E->F)",
       [](FileConfig& c, const std::string& v) {
         c.model.dense_tail_layers = to_int("dense_tail_layers", v);
       }},
      {"use_d_skip", "include the skip term in the scan",
       [](FileConfig& c, const std::string& v) { c.model.use_d_skip = to_bool("use_d_skip", v); }},
      {"moe_reuse_router", "E layers reuse the preceding R layer's decision",
       [](FileConfig& c, const std::string& v) {
         c.model.moe_reuse_router = to_bool("moe_reuse_router", v);
       }},
      {"peak_lr", "maximum learning rate",
       [](FileConfig& c, const std::string& v) { c.train.peak_lr = to_double("peak_lr", v); }},
      {"beta1", "AdamW beta1",
       [](FileConfig& c, const std::string& v) { c.train.beta1 = to_double("beta1", v); }},
      {"beta2", "AdamW beta2",
       [](FileConfig& c, const std::string& v) { c.train.beta2 = to_double("beta2", v); }},
      {"adam_eps", "AdamW epsilon",
       [](FileConfig& c, const std::string& v) { c.train.adam_eps = to_double("adam_eps", v); }},
      {"weight_decay", "decoupled weight decay",
       [](FileConfig& c, const std::string& v) {
         c.train.weight_decay = to_double("weight_decay", v);
       }},
      {"grad_clip", "global L2 gradient clip",
       [](FileConfig& c, const std::string& v) { c.train.grad_clip = to_double("grad_clip", v); }},
      {"warmup_ratio", "fraction of steps spent in linear warmup",
       [](FileConfig& c, const std::string& v) {
         c.train.warmup_ratio = to_double("warmup_ratio", v);
       }},
      {"total_tokens", "training token budget",
       [](FileConfig& c, const std::string& v) { c.train.total_tokens = to_int("total_tokens", v); }},
      {"batch_tokens", "tokens per optimizer step",
       [](FileConfig& c, const std::string& v) { c.train.batch_tokens = to_int("batch_tokens", v); }},
      {"seq_len", "training sequence length",
       [](FileConfig& c, const std::string& v) { c.train.seq_len = to_int("seq_len", v); }},
      {"seed", "global seed",
       [](FileConfig& c, const std::string& v) {
         c.train.seed = static_cast<uint64_t>(to_int("seed", v));
       }},
      {"dtype", "f32 | f64",
       [](FileConfig& c, const std::string& v) { c.train.dtype = v; }},
      {"log_interval", "steps between metric records",
       [](FileConfig& c, const std::string& v) { c.train.log_interval = to_int("log_interval", v); }},
      {"checkpoint_interval", "steps between checkpoints (0: final only)",
       [](FileConfig& c, const std::string& v) {
         c.train.checkpoint_interval = to_int("checkpoint_interval", v);
       }},
      {"eval_interval", "steps between validation evals (0: final only)",
       [](FileConfig& c, const std::string& v) { c.train.eval_interval = to_int("eval_interval", v); }},
      {"eval_tokens", "validation tokens per eval",
       [](FileConfig& c, const std::string& v) { c.train.eval_tokens = to_int("eval_tokens", v); }},
      {"corpus", "path to the training text",
       [](FileConfig& c, const std::string& v) { c.train.corpus_path = v; }},
      {"val_fraction", "held-out fraction of the token stream",
       [](FileConfig& c, const std::string& v) {
         c.train.val_fraction = to_double("val_fraction", v);
       }},
  };
  return table;
}

size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1] ? 1 : 0)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(const std::string& key) {
  size_t best = SIZE_MAX;
  std::string name;
  for (const auto& f : fields()) {
    const size_t d = edit_distance(key, f.key);
    if (d < best) {
      best = d;
      name = f.key;
    }
  }
  return name;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

FileConfig parse_config_text(const std::string& text, const std::string& origin) {
  FileConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool handled = false;
    for (const auto& f : fields())
      if (key == f.key) {
        f.set(cfg, value);
        handled = true;
        break;
      }
    if (!handled)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key +
                        "' (nearest valid key: '" + nearest_key(key) + "')");
  }
  return cfg;
}

FileConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string config_schema() {
  std::ostringstream os;
  os << "# key = value per line; '#' starts a comment\n";
  for (const auto& f : fields()) os << f.key << "\n    " << f.doc << "\n";
  return os.str();
}

}  // namespace rom
