// Command-line surface: count, train, eval, route-stats, selfcheck.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "rom/accounting.hpp"
#include "rom/train.hpp"
#include "selfcheck.hpp"

namespace {

using namespace rom;

struct CommonOpts {
  std::string config_path;
  int64_t seed = -1;       // overrides config when >= 0
  std::string dtype;       // overrides config when set
  std::string out_dir = "out";
  std::string metrics = "-";  // '-' for stdout
};

FileConfig load_config(const CommonOpts& o) {
  FileConfig cfg = parse_config_file(o.config_path);
  if (o.seed >= 0) cfg.train.seed = static_cast<uint64_t>(o.seed);
  if (!o.dtype.empty()) cfg.train.dtype = o.dtype;
  return cfg;
}

Corpus load_corpus(const FileConfig& cfg) {
  if (cfg.train.corpus_path.empty())
    throw ConfigError("config: 'corpus' must point at a training text file");
  return Corpus::from_files({cfg.train.corpus_path}, cfg.train.val_fraction);
}

std::vector<int64_t> parse_lengths(const std::string& csv) {
  std::vector<int64_t> lengths;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    lengths.push_back(std::stoll(item));
  }
  if (lengths.empty()) throw ConfigError("eval: --context-lengths must list at least one length");
  return lengths;
}

template <class T>
int cmd_train(const FileConfig& cfg, const CommonOpts& o, const std::string& resume) {
  Corpus corpus = load_corpus(cfg);
  LanguageModel<T> model = build_model<T>(cfg.model, cfg.train.seed);
  std::ofstream file;
  std::ostream* metrics = &std::cout;
  if (o.metrics != "-") {
    file.open(o.metrics, std::ios::trunc);
    if (!file) throw ConfigError("train: cannot open metrics file '" + o.metrics + "'");
    metrics = &file;
  }
  TrainResult r = train(model, corpus, cfg.train, metrics, o.out_dir, resume);
  std::cerr << "trained " << r.steps << " steps (" << r.tokens << " tokens); final val loss "
            << r.final_val_loss << "; checkpoint " << r.final_checkpoint << "\n";
  return 0;
}

template <class T>
int cmd_eval(const FileConfig& cfg, const std::string& checkpoint, const std::string& lengths_csv,
             const std::string& csv_path, int64_t max_tokens) {
  Corpus corpus = load_corpus(cfg);
  LanguageModel<T> model = build_model<T>(cfg.model, cfg.train.seed);
  load_model_checkpoint(checkpoint, model);
  auto rows = evaluate_ppl(model, corpus, parse_lengths(lengths_csv), max_tokens);
  std::ostringstream csv;
  csv << "context_length,ppl,tokens\n";
  for (const auto& row : rows) csv << row.context_length << "," << row.ppl << "," << row.tokens << "\n";
  if (csv_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw ConfigError("eval: cannot open '" + csv_path + "'");
    out << csv.str();
    std::cerr << "wrote " << csv_path << "\n";
  }
  return 0;
}

template <class T>
int cmd_route_stats(const FileConfig& cfg, const std::string& checkpoint, const std::string& input,
                    int64_t max_tokens) {
  LanguageModel<T> model = build_model<T>(cfg.model, cfg.train.seed);
  load_model_checkpoint(checkpoint, model);
  std::ifstream in(input, std::ios::binary);
  if (!in) throw ConfigError("route-stats: cannot open '" + input + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<int32_t> ids;
  for (unsigned char c : text) {
    ids.push_back(static_cast<int32_t>(c));
    if (max_tokens > 0 && static_cast<int64_t>(ids.size()) >= max_tokens) break;
  }
  if (ids.size() < 2) throw ConfigError("route-stats: input too short");
  LmOutput<T> out = lm_forward(model, std::span<const int32_t>(ids), /*training=*/false, 0, 0);
  if (out.routing.empty()) {
    std::cout << "{\"layers\":[]}\n";
    return 0;
  }
  std::ostringstream os;
  os.precision(6);
  os << "{\"tokens\":" << ids.size() << ",\"layers\":[";
  for (size_t i = 0; i < out.routing.size(); ++i) {
    const auto& lr = out.routing[i];
    if (i) os << ',';
    os << "{\"layer\":" << lr.layer << ",\"kind\":\"" << lr.kind << "\",\"sites\":[";
    for (size_t j = 0; j < lr.decisions.size(); ++j) {
      const auto& [p, d] = lr.decisions[j];
      RoutingStats st = routing_stats(d);
      if (j) os << ',';
      os << "{\"proj\":\"" << proj_name(p) << "\",\"entropy\":" << st.entropy
         << ",\"max_load\":" << st.max_load << ",\"utilization\":[";
      for (size_t e = 0; e < st.utilization.size(); ++e) {
        if (e) os << ',';
        os << st.utilization[e];
      }
      os << "]}";
    }
    os << "]}";
  }
  os << "]}";
  std::cout << os.str() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"routed-mamba laboratory: training, evaluation, and cost accounting"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string resume, checkpoint, lengths = "256,512,1024", csv_path, input;
  int64_t seq_len = 4096, max_tokens = 0;
  bool per_layer = false, show_schema = false;

  app.add_flag("--schema", show_schema, "print the config file schema and exit");

  auto* count = app.add_subcommand("count", "parameter and FLOP accounting for a config");
  count->add_option("config", opts.config_path)->required();
  count->add_option("--seq-len", seq_len, "sequence length for FLOP accounting");
  count->add_flag("--per-layer", per_layer, "print the per-layer breakdown");

  auto* train_cmd = app.add_subcommand("train", "train a model described by a config");
  train_cmd->add_option("config", opts.config_path)->required();
  train_cmd->add_option("--seed", opts.seed, "override the config seed");
  train_cmd->add_option("--dtype", opts.dtype, "override the config dtype (f32|f64)");
  train_cmd->add_option("--out-dir", opts.out_dir, "checkpoint directory");
  train_cmd->add_option("--resume", resume, "checkpoint directory to resume from");
  train_cmd->add_option("--metrics", opts.metrics, "metrics stream path, or - for stdout");

  auto* eval_cmd = app.add_subcommand("eval", "validation perplexity across context lengths");
  eval_cmd->add_option("config", opts.config_path)->required();
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--context-lengths", lengths, "comma-separated context lengths");
  eval_cmd->add_option("--csv", csv_path, "write the table to a CSV file");
  eval_cmd->add_option("--max-tokens", max_tokens, "cap evaluated tokens per length (0: all)");
  eval_cmd->add_option("--seed", opts.seed, "override the config seed");
  eval_cmd->add_option("--dtype", opts.dtype, "override the config dtype");

  auto* stats_cmd = app.add_subcommand("route-stats", "per-layer expert utilization on an input");
  stats_cmd->add_option("config", opts.config_path)->required();
  stats_cmd->add_option("--checkpoint", checkpoint)->required();
  stats_cmd->add_option("--input", input, "input text file")->required();
  stats_cmd->add_option("--max-tokens", max_tokens, "cap input tokens (0: all)");
  stats_cmd->add_option("--seed", opts.seed, "override the config seed");
  stats_cmd->add_option("--dtype", opts.dtype, "override the config dtype");

  auto* selfcheck_cmd = app.add_subcommand("selfcheck", "run the built-in oracle suites");
  (void)selfcheck_cmd;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (show_schema) {
    std::cout << rom::config_schema();
    return 0;
  }

  try {
    if (app.got_subcommand("selfcheck")) return run_selfcheck();
    if (app.got_subcommand("count")) {
      rom::FileConfig cfg = load_config(opts);
      rom::CostReport params = rom::count_params(cfg.model);
      rom::CostReport flops = rom::count_flops(cfg.model, seq_len);
      params.flops = flops.flops;
      params.seq_len = flops.seq_len;
      for (size_t i = 0; i < params.per_layer.size(); ++i)
        params.per_layer[i].flops = flops.per_layer[i].flops;
      std::cout << rom::format_cost_report(params, per_layer);
      return 0;
    }
    rom::FileConfig cfg = load_config(opts);
    const bool f64 = cfg.train.dtype == "f64";
    if (app.got_subcommand("train"))
      return f64 ? cmd_train<double>(cfg, opts, resume) : cmd_train<float>(cfg, opts, resume);
    if (app.got_subcommand("eval"))
      return f64 ? cmd_eval<double>(cfg, checkpoint, lengths, csv_path, max_tokens)
                 : cmd_eval<float>(cfg, checkpoint, lengths, csv_path, max_tokens);
    if (app.got_subcommand("route-stats"))
      return f64 ? cmd_route_stats<double>(cfg, checkpoint, input, max_tokens)
                 : cmd_route_stats<float>(cfg, checkpoint, input, max_tokens);
  } catch (const rom::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const rom::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
