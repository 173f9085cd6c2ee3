#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "attack.hpp"
#include "bridge.hpp"
#include "context_mix.hpp"
#include "corpus.hpp"
#include "decoder.hpp"
#include "detector.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "parallel.hpp"
#include "parity.hpp"
#include "records.hpp"

namespace dgmark::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitPartial = 4;

inline constexpr const char* kRunSchema = "dgmark.run";
inline constexpr const char* kDetectorSchema = "dgmark.detector";
inline constexpr int kSchemaVersion = 1;

// Flags shared by every subcommand; they override the config document.
struct Overrides {
  std::string config_path;
  std::optional<std::string> key_path;
  std::optional<std::string> out_path;
  std::optional<std::string> input_path;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
};

struct RunConfig {
  nlohmann::json doc;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::optional<std::string> key_path;
  std::optional<std::string> input;
  std::optional<std::string> output;
  PartitionMode partition_mode = PartitionMode::keyed;
  std::optional<std::size_t> partition_vocab;
};

// Errors raised while reading or validating configuration (exit 2).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorKind::config, message) {}
};

inline void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) throw ConfigError(what + " '" + path + "' does not exist");
}

inline RunConfig load_config(const Overrides& flags) {
  RunConfig cfg;
  std::ifstream in(flags.config_path);
  if (!in) throw ConfigError("cannot read config '" + flags.config_path + "'");
  try {
    cfg.doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!cfg.doc.is_object() || cfg.doc.value("schema", std::string()) != kRunSchema) {
    throw ConfigError(std::string("config must declare \"schema\": \"") + kRunSchema + "\"");
  }
  if (cfg.doc.value("version", 0) != kSchemaVersion) {
    throw ConfigError("unsupported config version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  try {
    cfg.seed = flags.seed ? *flags.seed : cfg.doc.value("seed", std::uint64_t{0});
    std::optional<std::size_t> workers = flags.workers;
    if (!workers && cfg.doc.contains("workers")) workers = cfg.doc.at("workers").get<std::size_t>();
    cfg.workers = resolve_workers(workers);
    if (flags.key_path) {
      cfg.key_path = flags.key_path;
    } else if (cfg.doc.contains("key")) {
      cfg.key_path = cfg.doc.at("key").get<std::string>();
    }
    if (flags.input_path) {
      cfg.input = flags.input_path;
    } else if (cfg.doc.contains("input")) {
      cfg.input = cfg.doc.at("input").get<std::string>();
    }
    if (flags.out_path) {
      cfg.output = flags.out_path;
    } else if (cfg.doc.contains("output")) {
      cfg.output = cfg.doc.at("output").get<std::string>();
    }
    if (cfg.doc.contains("partition")) {
      const auto& p = cfg.doc.at("partition");
      cfg.partition_mode = parse_partition_mode(p.value("mode", std::string("keyed")));
      if (p.contains("vocab_size")) cfg.partition_vocab = p.at("vocab_size").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config field: ") + e.what());
  }
  return cfg;
}

// Keyed partitions need a key file; token-id-mod-2 ignores the key.
inline ParityPartition make_partition(const RunConfig& cfg, std::size_t vocab_size) {
  if (cfg.partition_vocab && *cfg.partition_vocab != vocab_size) {
    throw ConfigError("partition vocab_size " + std::to_string(*cfg.partition_vocab) +
                      " does not match model vocab_size " + std::to_string(vocab_size));
  }
  if (cfg.partition_mode == PartitionMode::token_id_mod_2) {
    return build_partition(make_key("unused", 0), vocab_size, PartitionMode::token_id_mod_2);
  }
  if (!cfg.key_path) throw ConfigError("keyed partition needs --key or \"key\" in the config");
  require_file(*cfg.key_path, "key file");
  return build_partition(read_key_file(*cfg.key_path), vocab_size, PartitionMode::keyed);
}

inline std::unique_ptr<Predictor> make_model(const nlohmann::json& spec, std::size_t length) {
  const auto kind = spec.at("kind").get<std::string>();
  if (kind == "factorized-uniform") {
    return std::make_unique<FactorizedToyModel>(
        FactorizedToyModel::uniform(spec.at("vocab_size").get<std::size_t>(), spec.value("length", length)));
  }
  if (kind == "factorized") {
    auto probs = spec.at("probs").get<std::vector<std::vector<double>>>();
    if (probs.size() == 1 && length > 1) probs.assign(length, probs.front());
    return std::make_unique<FactorizedToyModel>(std::move(probs));
  }
  const double alpha = spec.value("alpha", 0.1);
  std::optional<std::size_t> vocab;
  if (spec.contains("vocab_size")) vocab = spec.at("vocab_size").get<std::size_t>();
  if (kind == "context-mix") {
    const auto path = spec.at("corpus").get<std::string>();
    require_file(path, "corpus");
    return std::make_unique<ContextMixToyModel>(train_context_mix(corpus_tokens(read_corpus_jsonl(path)), alpha, vocab));
  }
  if (kind == "context-mix-synthetic") {
    MarkovCorpusSpec c;
    c.vocab_size = spec.value("vocab_size", c.vocab_size);
    c.sequences = spec.value("sequences", c.sequences);
    c.length = spec.value("corpus_length", c.length);
    c.branching = spec.value("branching", c.branching);
    c.seed = spec.value("corpus_seed", c.seed);
    return std::make_unique<ContextMixToyModel>(
        train_context_mix(corpus_tokens(synthetic_markov_corpus(c)), alpha, c.vocab_size));
  }
  if (kind == "bridge") {
    return std::make_unique<BridgePredictor>(spec.at("command").get<std::vector<std::string>>(),
                                             spec.value("top_k", bridge::kDefaultTopK));
  }
  throw ConfigError("unknown model kind '" + kind + "'");
}

inline DecodeConfig parse_decode(const nlohmann::json& d) {
  DecodeConfig c;
  c.mode = parse_decode_mode(d.value("mode", std::string("dgmark")));
  c.length = d.at("length").get<std::size_t>();
  c.block_size = d.value("block_size", std::size_t{0});
  c.beam = d.value("beam", std::size_t{1});
  if (d.contains("strategy")) {
    const auto& s = d.at("strategy");
    c.strategy.kind = parse_strategy_kind(s.value("kind", std::string("confidence")));
    c.strategy.selection = parse_selection(s.value("selection", std::string("multinomial")));
    c.strategy.temperature = s.value("temperature", 1.0);
  }
  c.validate();
  return c;
}

struct DetectorSettings {
  DetectorConfig config;
  bool emit_windows = false;
};

inline DetectorSettings parse_detector(const nlohmann::json& doc) {
  DetectorSettings s;
  if (!doc.contains("detector")) return s;
  const auto& d = doc.at("detector");
  s.config.window = d.value("window", s.config.window);
  s.config.stride = d.value("stride", s.config.stride);
  if (d.contains("z_threshold")) s.config.z_threshold = d.at("z_threshold").get<double>();
  if (d.contains("z_win_threshold")) s.config.z_win_threshold = d.at("z_win_threshold").get<double>();
  s.emit_windows = d.value("emit_windows", false);
  s.config.validate();
  return s;
}

inline std::string require_output(const RunConfig& cfg) {
  if (!cfg.output) throw ConfigError("no output path: pass --out or set \"output\"");
  return *cfg.output;
}

inline std::string require_input(const RunConfig& cfg) {
  if (!cfg.input) throw ConfigError("no input path: pass --input or set \"input\"");
  require_file(*cfg.input, "input");
  return *cfg.input;
}

inline std::string record_id(const nlohmann::json& record, std::size_t index) {
  if (record.contains("id") && record.at("id").is_string()) return record.at("id").get<std::string>();
  return "record-" + std::to_string(index);
}

// ---------------------------------------------------------------------------

inline int cmd_generate(const RunConfig& cfg, std::ostream& log) {
  DecodeConfig base;
  std::unique_ptr<Predictor> model;
  std::vector<CorpusRecord> prompts;
  std::size_t seeds_per_prompt = 1;
  std::string out_path;
  try {
    base = parse_decode(cfg.doc.at("decode"));
    if (!cfg.doc.contains("model")) throw ConfigError("generate needs a \"model\" section");
    seeds_per_prompt = cfg.doc.value("seeds_per_prompt", std::size_t{1});
    if (cfg.doc.contains("prompts")) {
      const auto path = cfg.doc.at("prompts").get<std::string>();
      require_file(path, "prompts file");
      prompts = read_corpus_jsonl(path);
    } else {
      const auto count = cfg.doc.value("num_prompts", std::size_t{1});
      for (std::size_t i = 0; i < count; ++i) prompts.push_back({"p" + std::to_string(i), {}});
    }
    out_path = require_output(cfg);
    model = make_model(cfg.doc.at("model"), base.length);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad generate config: ") + e.what());
  }
  std::optional<ParityPartition> partition;
  if (base.mode != DecodeMode::plain) partition.emplace(make_partition(cfg, model->vocab_size()));

  const std::size_t total = prompts.size() * seeds_per_prompt;
  auto records = parallel_map(total, cfg.workers, [&](std::size_t i) {
    const auto& prompt = prompts[i / seeds_per_prompt];
    const std::string id = prompt.id + "/" + std::to_string(i % seeds_per_prompt);
    DecodeConfig config = base;
    config.seed = derive_seed(cfg.seed, id, "decode");
    const auto result = decode(*model, config, prompt.tokens, partition ? &*partition : nullptr);
    return decode_record(id, config, result);
  });
  write_jsonl(out_path, records);
  log << "generate: wrote " << records.size() << " records to " << out_path << '\n';
  return kExitOk;
}

inline int cmd_detect(const RunConfig& cfg, std::ostream& log) {
  DetectorSettings settings;
  std::size_t vocab = 0;
  std::string in_path, out_path;
  try {
    settings = parse_detector(cfg.doc);
    if (!cfg.partition_vocab) throw ConfigError("detect needs \"partition\": {\"vocab_size\": ...}");
    vocab = *cfg.partition_vocab;
    in_path = require_input(cfg);
    out_path = require_output(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad detect config: ") + e.what());
  }
  const auto partition = make_partition(cfg, vocab);
  const auto input = read_jsonl(in_path);
  std::atomic<std::size_t> failures{0};
  auto reports = parallel_map(input.size(), cfg.workers, [&](std::size_t i) {
    const auto id = record_id(input[i], i);
    try {
      const auto tokens = input[i].at("tokens").get<std::vector<Token>>();
      const auto report = detect(tokens, partition, settings.config);
      return detection_record(id, report, settings.emit_windows);
    } catch (const std::exception& e) {
      ++failures;
      return error_record(id, e.what());
    }
  });
  write_jsonl(out_path, reports);
  log << "detect: " << reports.size() << " reports, " << failures.load() << " errors\n";
  return failures.load() > 0 ? kExitPartial : kExitOk;
}

inline int cmd_attack(const RunConfig& cfg, std::ostream& log) {
  std::vector<AttackSpec> specs;
  std::string in_path, out_path;
  try {
    if (!cfg.doc.contains("attacks")) throw ConfigError("attack needs an \"attacks\" list");
    if (!cfg.partition_vocab) throw ConfigError("attack needs \"partition\": {\"vocab_size\": ...} to sample tokens");
    for (const auto& a : cfg.doc.at("attacks")) {
      AttackSpec s;
      s.kind = parse_attack_kind(a.at("kind").get<std::string>());
      s.epsilon = a.at("epsilon").get<double>();
      s.vocab_size = *cfg.partition_vocab;
      s.validate();
      specs.push_back(s);
    }
    in_path = require_input(cfg);
    out_path = require_output(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad attack config: ") + e.what());
  }
  const auto input = read_jsonl(in_path);
  std::atomic<std::size_t> failures{0};
  const std::size_t total = input.size() * specs.size();
  auto records = parallel_map(total, cfg.workers, [&](std::size_t i) {
    const auto& rec = input[i / specs.size()];
    const auto a = i % specs.size();
    const auto id = record_id(rec, i / specs.size());
    AttackSpec spec = specs[a];
    spec.seed = derive_seed(cfg.seed, id, "attack:" + std::to_string(a));
    try {
      nlohmann::json out = rec;
      out["tokens"] = apply_attack(rec.at("tokens").get<std::vector<Token>>(), spec);
      out["attack"] = {{"kind", std::string(to_string(spec.kind))}, {"epsilon", spec.epsilon}, {"seed", spec.seed}};
      return out;
    } catch (const std::exception& e) {
      ++failures;
      return error_record(id, e.what());
    }
  });
  write_jsonl(out_path, records);
  log << "attack: wrote " << records.size() << " records, " << failures.load() << " errors\n";
  return failures.load() > 0 ? kExitPartial : kExitOk;
}

namespace detail {

struct Side {
  std::vector<double> scores;
  std::vector<double> ratios;
  std::vector<std::string> ids;
};

inline Side load_side(const std::vector<std::string>& paths, const std::string& statistic, std::size_t window) {
  Side side;
  for (const auto& path : paths) {
    for (const auto& rec : read_jsonl(path)) {
      if (rec.contains("error")) continue;
      const auto& value = rec.at(statistic);
      if (value.is_null()) continue;
      side.scores.push_back(value.get<double>());
      side.ids.push_back(rec.value("id", std::string()));
      if (rec.contains("windows") && window > 0) {
        for (auto g : rec.at("windows")) {
          side.ratios.push_back(g.get<double>() / static_cast<double>(window));
        }
      }
    }
  }
  return side;
}

inline std::optional<double> mean_ppl(const std::map<std::string, double>& ppl, const std::vector<std::string>& ids) {
  double total = 0.0;
  std::size_t hits = 0;
  for (const auto& id : ids) {
    if (auto it = ppl.find(id); it != ppl.end()) {
      total += it->second;
      ++hits;
    }
  }
  if (hits == 0) return std::nullopt;
  return total / static_cast<double>(hits);
}

}  // namespace detail

// PPL is computed outside this toolkit; an optional JSONL of {"id", "ppl"}
// is joined onto the report by record id.
inline int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  std::vector<std::string> pos_paths, neg_paths;
  std::string statistic, out_path;
  std::vector<double> thresholds, levels(std::begin(kDefaultFprLevels), std::end(kDefaultFprLevels));
  std::size_t bins = 0, window = 0;
  std::optional<std::string> roc_csv, hist_csv, ppl_path;
  try {
    const auto& e = cfg.doc.at("eval");
    pos_paths = e.at("positives").get<std::vector<std::string>>();
    neg_paths = e.at("negatives").get<std::vector<std::string>>();
    for (const auto& p : pos_paths) require_file(p, "positive reports");
    for (const auto& p : neg_paths) require_file(p, "negative reports");
    statistic = e.value("statistic", std::string("z"));
    if (statistic != "z" && statistic != "z_win") throw ConfigError("eval statistic must be \"z\" or \"z_win\"");
    thresholds = e.value("thresholds", std::vector<double>{});
    if (e.contains("levels")) levels = e.at("levels").get<std::vector<double>>();
    bins = e.value("histogram_bins", std::size_t{0});
    window = parse_detector(cfg.doc).config.window;
    if (e.contains("roc_csv")) roc_csv = e.at("roc_csv").get<std::string>();
    if (e.contains("histogram_csv")) hist_csv = e.at("histogram_csv").get<std::string>();
    if (e.contains("ppl")) {
      ppl_path = e.at("ppl").get<std::string>();
      require_file(*ppl_path, "ppl file");
    }
    out_path = require_output(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad eval config: ") + e.what());
  }
  const auto pos = detail::load_side(pos_paths, statistic, window);
  const auto neg = detail::load_side(neg_paths, statistic, window);
  ScoreSet scores{pos.scores, neg.scores};
  auto report = evaluate(scores, statistic, thresholds, levels);
  if (bins > 0) {
    if (!pos.ratios.empty()) report.positive_histogram = match_ratio_histogram(pos.ratios, bins);
    if (!neg.ratios.empty()) report.negative_histogram = match_ratio_histogram(neg.ratios, bins);
  }
  if (ppl_path) {
    std::map<std::string, double> ppl;
    for (const auto& rec : read_jsonl(*ppl_path)) ppl[rec.at("id").get<std::string>()] = rec.at("ppl").get<double>();
    report.positive_mean_ppl = detail::mean_ppl(ppl, pos.ids);
    report.negative_mean_ppl = detail::mean_ppl(ppl, neg.ids);
  }
  {
    std::ofstream out(out_path);
    if (!out) throw Error(ErrorKind::io, "cannot write '" + out_path + "'");
    out << to_json(report).dump(2) << '\n';
  }
  if (roc_csv) {
    std::ofstream out(*roc_csv);
    write_roc_csv(out, roc_curve(scores));
  }
  if (hist_csv && (report.positive_histogram || report.negative_histogram)) {
    std::ofstream out(*hist_csv);
    out << "label,bin_low,bin_high,count\n";
    for (const auto& [label, h] : {std::pair{"positive", report.positive_histogram},
                                   std::pair{"negative", report.negative_histogram}}) {
      if (!h) continue;
      for (std::size_t b = 0; b < h->counts.size(); ++b) {
        out << label << ',' << h->edges[b] << ',' << h->edges[b + 1] << ',' << h->counts[b] << '\n';
      }
    }
  }
  for (const auto& w : report.warnings) log << "eval: warning: " << w << '\n';
  log << "eval: auc " << report.auc << " over " << report.positives << "/" << report.negatives << '\n';
  return kExitOk;
}

inline int cmd_calibrate(const RunConfig& cfg, std::ostream& log) {
  CalibrationRequest req;
  std::string out_path;
  try {
    const auto& c = cfg.doc.at("calibrate");
    req.null_model = parse_null_model(c.value("null_model", std::string("exact-binomial")));
    req.statistic = parse_statistic(c.value("statistic", std::string("z")));
    req.n = c.at("n").get<std::size_t>();
    req.window = c.value("window", req.window);
    req.stride = c.value("stride", req.stride);
    req.target_fpr = c.at("target_fpr").get<double>();
    req.trials = c.value("trials", req.trials);
    req.seed = derive_seed(cfg.seed, "calibrate", "null");
    if (cfg.partition_vocab) {
      req.null = ParityNull::of(make_partition(cfg, *cfg.partition_vocab));
    }
    out_path = require_output(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad calibrate config: ") + e.what());
  }
  const auto threshold = calibrate(req);
  nlohmann::json detector = {{"window", req.window}, {"stride", req.stride}};
  if (req.statistic == Statistic::global_z) {
    detector["z_threshold"] = threshold.value;
    detector["g_threshold"] = *threshold.match_count;
  } else {
    detector["z_win_threshold"] = threshold.value;
  }
  nlohmann::json out = {{"schema", kDetectorSchema},
                        {"version", kSchemaVersion},
                        {"detector", detector},
                        {"calibration",
                         {{"null_model", std::string(to_string(req.null_model))},
                          {"statistic", std::string(to_string(req.statistic))},
                          {"n", req.n},
                          {"target_fpr", req.target_fpr},
                          {"null_exceedance", threshold.null_exceedance},
                          {"trials", req.null_model == NullModel::monte_carlo ? nlohmann::json(req.trials) : nlohmann::json()},
                          {"seed", req.seed}}}};
  std::ofstream file(out_path);
  if (!file) throw Error(ErrorKind::io, "cannot write '" + out_path + "'");
  file << out.dump(2) << '\n';
  log << "calibrate: threshold " << threshold.value << " (null exceedance " << threshold.null_exceedance << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

// Entry point shared by the dgmark binary and in-process tests.
inline int run(const std::vector<std::string>& args, std::ostream& log = std::cerr) {
  CLI::App app{"dgmark: decoding-order watermarks for order-agnostic generation"};
  app.require_subcommand(1);
  Overrides flags;
  std::size_t workers = 0;
  std::uint64_t seed = 0;
  std::string key, out, input;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "decode sequences (plain, dgmark, lookahead) to JSONL"},
      {"detect", "score token sequences against a key"},
      {"attack", "apply random insert/delete/substitute edits"},
      {"eval", "confusion rates, TPR@FPR, ROC/AUC and histograms from reports"},
      {"calibrate", "derive a detector threshold for a target FPR"}};
  for (const auto& [name, description] : commands) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--config", flags.config_path, "run config (JSON)")->required();
    sub->add_option("--key", key, "key file");
    sub->add_option("--out", out, "output path");
    sub->add_option("--input", input, "input JSONL");
    sub->add_option("--workers", workers, "worker threads (fallback: DGMARK_WORKERS)");
    sub->add_option("--seed", seed, "root seed");
  }
  std::vector<std::string> argv_storage{"dgmark"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    std::ostringstream out_stream, err_stream;
    const int code = app.exit(e, out_stream, err_stream);
    log << out_stream.str() << err_stream.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string stage = sub->get_name();
  if (sub->count("--key")) flags.key_path = key;
  if (sub->count("--out")) flags.out_path = out;
  if (sub->count("--input")) flags.input_path = input;
  if (sub->count("--workers")) flags.workers = workers;
  if (sub->count("--seed")) flags.seed = seed;

  try {
    const auto cfg = load_config(flags);
    if (stage == "generate") return cmd_generate(cfg, log);
    if (stage == "detect") return cmd_detect(cfg, log);
    if (stage == "attack") return cmd_attack(cfg, log);
    if (stage == "eval") return cmd_eval(cfg, log);
    return cmd_calibrate(cfg, log);
  } catch (const Error& e) {
    log << "[" << stage << "] " << e.what() << '\n';
    return e.kind() == ErrorKind::config ? kExitConfig : kExitRuntime;
  } catch (const nlohmann::json::exception& e) {
    log << "[" << stage << "] malformed record: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    log << "[" << stage << "] " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace dgmark::cli
