#pragma once

// Deterministic desk-scale training and evaluation. Batch offsets and router
// jitter derive from (seed, step, ...) counters, so a resumed run continues
// bitwise identically to an uninterrupted one.

#include <filesystem>
#include <iostream>

#include "rom/checkpoint.hpp"
#include "rom/corpus.hpp"
#include "rom/metrics.hpp"
#include "rom/optim.hpp"

namespace rom {

template <class T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

// ---------------------------------------------------------------------------
// Checkpoint save/load of model parameters plus optimizer state.
// ---------------------------------------------------------------------------

template <class T>
void save_training_checkpoint(const std::string& dir, const LanguageModel<T>& model,
                              const AdamState<T>& adam, int64_t step, int64_t tokens,
                              uint64_t seed) {
  CheckpointManifest mf;
  mf.dtype = dtype_name<T>();
  mf.step = step;
  mf.tokens = tokens;
  mf.seed = seed;
  mf.extra["adam_step"] = std::to_string(adam.step);
  mf.extra["param_count"] = std::to_string(model.params.numel());
  std::vector<const void*> blobs;
  auto push = [&](const std::string& name, const std::vector<T>& data,
                  const std::vector<int64_t>& shape) {
    TensorEntry e;
    e.name = name;
    e.dtype = dtype_name<T>();
    e.shape = shape;
    e.bytes = data.size() * sizeof(T);
    mf.tensors.push_back(std::move(e));
    blobs.push_back(data.data());
  };
  const auto& items = model.params.items();
  for (const auto& p : items) push(p.name, p.tensor.value(), p.tensor.shape());
  for (size_t i = 0; i < items.size(); ++i)
    push("adam.m." + items[i].name, adam.m[i], items[i].tensor.shape());
  for (size_t i = 0; i < items.size(); ++i)
    push("adam.v." + items[i].name, adam.v[i], items[i].tensor.shape());
  write_checkpoint(dir, std::move(mf), blobs);
}

template <class T>
void load_tensor_from_blob(const CheckpointManifest& mf, const std::vector<char>& blob,
                           const std::string& name, std::vector<T>& dst) {
  const TensorEntry* e = mf.find(name);
  if (e == nullptr) throw ContractError("checkpoint: missing tensor '" + name + "'");
  if (e->dtype != dtype_name<T>())
    throw ContractError("checkpoint: tensor '" + name + "' has dtype " + e->dtype + ", expected " +
                        dtype_name<T>());
  if (e->bytes != dst.size() * sizeof(T))
    throw ContractError("checkpoint: tensor '" + name + "' holds " + std::to_string(e->bytes) +
                        " bytes, expected " + std::to_string(dst.size() * sizeof(T)));
  std::copy(blob.data() + e->offset, blob.data() + e->offset + e->bytes,
            reinterpret_cast<char*>(dst.data()));
}

// Restores parameters only (for eval / route-stats).
template <class T>
CheckpointManifest load_model_checkpoint(const std::string& dir, LanguageModel<T>& model) {
  CheckpointManifest mf = read_manifest(dir);
  std::vector<char> blob = read_blob(dir);
  for (auto& p : model.params.items()) load_tensor_from_blob(mf, blob, p.name, p.tensor.value());
  return mf;
}

template <class T>
CheckpointManifest load_training_checkpoint(const std::string& dir, LanguageModel<T>& model,
                                            AdamState<T>& adam) {
  CheckpointManifest mf = load_model_checkpoint(dir, model);
  adam.init(model.params);
  const auto& items = model.params.items();
  std::vector<char> blob = read_blob(dir);
  for (size_t i = 0; i < items.size(); ++i) {
    load_tensor_from_blob(mf, blob, "adam.m." + items[i].name, adam.m[i]);
    load_tensor_from_blob(mf, blob, "adam.v." + items[i].name, adam.v[i]);
  }
  auto it = mf.extra.find("adam_step");
  adam.step = it == mf.extra.end() ? mf.step : std::stoll(it->second);
  return mf;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Mean next-token NLL over non-overlapping windows of the given stream.
// Window i consumes ids [i*len, i*len+len]; the trailing id is the last
// target. max_tokens <= 0 evaluates everything.
template <class T>
double mean_nll(const LanguageModel<T>& model, const std::vector<int32_t>& ids, int64_t len,
                int64_t max_tokens = 0) {
  if (static_cast<int64_t>(ids.size()) < len + 1)
    throw ContractError("mean_nll: stream shorter than one window");
  double total = 0;
  int64_t count = 0;
  for (int64_t start = 0; start + len + 1 <= static_cast<int64_t>(ids.size()); start += len) {
    std::span<const int32_t> ctx(ids.data() + start, static_cast<size_t>(len));
    std::vector<int32_t> targets(ids.begin() + start + 1, ids.begin() + start + len + 1);
    LmOutput<T> out = lm_forward(model, ctx, /*training=*/false, /*seed=*/0, /*step=*/0);
    total += static_cast<double>(cross_entropy_mean(out.logits, targets).item()) *
             static_cast<double>(len);
    count += len;
    if (max_tokens > 0 && count >= max_tokens) break;
  }
  return total / static_cast<double>(count);
}

struct PplRow {
  int64_t context_length = 0;
  double ppl = 0;
  int64_t tokens = 0;
};

template <class T>
std::vector<PplRow> evaluate_ppl(const LanguageModel<T>& model, const Corpus& corpus,
                                 const std::vector<int64_t>& context_lengths,
                                 int64_t max_tokens = 0) {
  std::vector<PplRow> rows;
  for (int64_t len : context_lengths) {
    if (static_cast<int64_t>(corpus.val_ids.size()) < len + 1)
      throw ContractError("evaluate_ppl: validation stream shorter than context length " +
                          std::to_string(len));
    const double nll = mean_nll(model, corpus.val_ids, len, max_tokens);
    int64_t evaluated = ((static_cast<int64_t>(corpus.val_ids.size()) - 1) / len) * len;
    if (max_tokens > 0) evaluated = std::min(evaluated, ((max_tokens + len - 1) / len) * len);
    rows.push_back(PplRow{len, std::exp(nll), evaluated});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  int64_t steps = 0;
  int64_t tokens = 0;
  double final_train_loss = 0;
  double final_val_loss = 0;
  std::string final_checkpoint;
};

template <class T>
TrainResult train(LanguageModel<T>& model, const Corpus& corpus, const TrainConfig& cfg,
                  std::ostream* metrics, const std::string& out_dir,
                  const std::string& resume_dir = "") {
  cfg.validate();
  const int64_t L = cfg.seq_len;
  const int64_t batch_seqs = cfg.batch_tokens / L;
  const int64_t total_steps = cfg.total_steps();
  if (static_cast<int64_t>(corpus.train_ids.size()) < L + 2)
    throw ContractError("train: corpus too small for seq_len " + std::to_string(L));
  const int64_t max_start = static_cast<int64_t>(corpus.train_ids.size()) - L - 1;

  AdamState<T> adam;
  int64_t start_step = 0;
  if (!resume_dir.empty()) {
    CheckpointManifest mf = load_training_checkpoint(resume_dir, model, adam);
    start_step = mf.step;
    if (mf.seed != cfg.seed)
      throw ContractError("train: checkpoint seed " + std::to_string(mf.seed) +
                          " does not match configured seed " + std::to_string(cfg.seed));
  } else {
    adam.init(model.params);
  }
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  auto eval_loss = [&]() {
    return mean_nll(model, corpus.val_ids, L, cfg.eval_tokens);
  };
  auto write_metrics = [&](const MetricsRecord& r) {
    if (metrics != nullptr) *metrics << to_json_line(r) << "\n" << std::flush;
  };

  TrainResult result;
  std::string last_checkpoint = resume_dir;
  double last_train_loss = 0;

  for (int64_t step = start_step + 1; step <= total_steps; ++step) {
    const double lr = lr_at(step, cfg);
    model.params.zero_grads();
    double loss_acc = 0;
    double ce_acc = 0;
    std::map<int64_t, std::vector<int64_t>> counts;  // layer -> per-expert assignments

    for (int64_t b = 0; b < batch_seqs; ++b) {
      const int64_t start = static_cast<int64_t>(
          stream_key({cfg.seed, 0xba7c4ull, static_cast<uint64_t>(step), static_cast<uint64_t>(b)}) %
          static_cast<uint64_t>(max_start + 1));
      std::span<const int32_t> ctx(corpus.train_ids.data() + start, static_cast<size_t>(L));
      std::vector<int32_t> targets(corpus.train_ids.begin() + start + 1,
                                   corpus.train_ids.begin() + start + L + 1);

      Tape<T> tape;
      LmOutput<T> out =
          lm_forward(model, ctx, /*training=*/true, cfg.seed, step * batch_seqs + b);
      Tensor<T> ce = cross_entropy_mean(out.logits, targets);
      Tensor<T> loss = out.balance.defined() ? add(ce, out.balance) : ce;
      const double loss_val = static_cast<double>(loss.item());
      if (!std::isfinite(loss_val))
        throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                           (last_checkpoint.empty() ? "" : "; last checkpoint: " + last_checkpoint));
      loss_acc += loss_val;
      ce_acc += static_cast<double>(ce.item());
      tape.backward(scale(loss, T(1) / static_cast<T>(batch_seqs)));

      for (const auto& lr_entry : out.routing) {
        auto& c = counts[lr_entry.layer];
        for (const auto& [p, dec] : lr_entry.decisions) {
          c.resize(static_cast<size_t>(dec.num_experts), 0);
          for (int32_t e : dec.indices) c[static_cast<size_t>(e)] += 1;
        }
      }
    }

    const double pre_clip = clip_global_grad_norm(model.params, cfg.grad_clip);
    adamw_step(model.params, adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    last_train_loss = loss_acc / static_cast<double>(batch_seqs);

    if (step % cfg.log_interval == 0 || step == total_steps) {
      MetricsRecord r;
      r.step = step;
      r.tokens = step * cfg.batch_tokens;
      r.split = "train";
      r.loss = last_train_loss;
      r.ppl = std::exp(ce_acc / static_cast<double>(batch_seqs));
      r.lr = lr;
      r.grad_norm = std::min(pre_clip, cfg.grad_clip);
      for (const auto& [layer, c] : counts) {
        int64_t sum = 0;
        for (int64_t v : c) sum += v;
        std::vector<double> util(c.size());
        for (size_t i = 0; i < c.size(); ++i)
          util[i] = static_cast<double>(c[i]) / static_cast<double>(sum);
        r.per_layer_utilization[layer] = std::move(util);
      }
      write_metrics(r);
    }

    if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0 && step != total_steps) {
      MetricsRecord r;
      r.step = step;
      r.tokens = step * cfg.batch_tokens;
      r.split = "val";
      r.loss = eval_loss();
      r.ppl = std::exp(r.loss);
      r.lr = lr;
      write_metrics(r);
    }

    const bool ckpt_due = cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0;
    if (!out_dir.empty() && (ckpt_due || step == total_steps)) {
      const std::string dir = out_dir + "/ckpt-" + std::to_string(step);
      save_training_checkpoint(dir, model, adam, step, step * cfg.batch_tokens, cfg.seed);
      last_checkpoint = dir;
    }
  }

  result.steps = total_steps;
  result.tokens = total_steps * cfg.batch_tokens;
  result.final_train_loss = last_train_loss;
  result.final_val_loss = eval_loss();
  result.final_checkpoint = last_checkpoint;

  MetricsRecord r;
  r.step = total_steps;
  r.tokens = result.tokens;
  r.split = "val";
  r.loss = result.final_val_loss;
  r.ppl = std::exp(result.final_val_loss);
  write_metrics(r);
  return result;
}

}  // namespace rom
