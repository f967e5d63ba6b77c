// Command-line front end: knowledge-build, train, eval, ablate, report.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "semirnet/http_transport.hpp"
#include "semirnet/semirnet.hpp"

namespace fs = std::filesystem;
using namespace semirnet;

namespace {

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool quiet = false;
};

void note(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << "\n";
}

RunConfig load_run_config(const Globals& g, bool required, const char* command) {
  if (g.config_path.empty()) {
    if (required) throw ConfigError(std::string(command) + ": --config is required");
    RunConfig cfg;
    if (g.seed_given) cfg.set("train.seed", g.seed);
    return cfg;
  }
  RunConfig cfg = RunConfig::load(g.config_path);
  if (g.seed_given) cfg.set("train.seed", g.seed);
  return cfg;
}

fs::path required_path(const RunConfig& cfg, const std::string& key) {
  const fs::path p = cfg.path(key);
  if (p.empty()) throw ConfigError("config: '" + key + "' must be set");
  return p;
}

/// Attaches precomputed image vectors (keyed by sample id) to samples
/// that do not carry one inline.
void attach_image_features(Dataset& ds, const FeatureMap& features) {
  for (auto& s : ds.samples) {
    if (s.image_vec) continue;
    auto it = features.find(s.id);
    if (it != features.end()) s.image_vec = it->second;
  }
}

Dataset load_split(const RunConfig& cfg, const std::string& key, Split split, const FeatureMap* features) {
  Dataset ds = load_dataset(required_path(cfg, key), split);
  if (features) attach_image_features(ds, *features);
  return ds;
}

std::optional<FeatureMap> load_features(const RunConfig& cfg) {
  const fs::path p = cfg.path("data.image_features");
  if (p.empty()) return std::nullopt;
  return load_precomputed_features(p);
}

std::set<std::string> load_stopwords(const RunConfig& cfg) {
  const fs::path p = cfg.path("knowledge.stopwords");
  return p.empty() ? default_stopwords() : load_word_list(p);
}

/// Edges for words the offline dump does not cover, fetched through the
/// cached ConceptNet client. Network failures fall back to the dump.
void augment_with_api(const RunConfig& cfg, const Globals& g, const std::vector<const Dataset*>& datasets,
                      std::vector<ConceptEdge>& edges) {
  const EdgeIndex offline(edges);
  std::set<std::string> words;
  for (const Dataset* ds : datasets) {
    for (const auto& s : ds->samples) {
      for (const auto& w : s.text) words.insert(normalize_concept(w));
      for (const auto& w : s.image_attrs) words.insert(normalize_concept(w));
    }
  }
  ConceptNetClientConfig cc;
  cc.endpoint = cfg.str("conceptnet.endpoint");
  cc.language = cfg.str("knowledge.language");
  cc.timeout_ms = static_cast<int>(cfg.uint("conceptnet.timeout_ms"));
  cc.max_retries = static_cast<int>(cfg.uint("conceptnet.max_retries"));
  cc.backoff_ms = static_cast<int>(cfg.uint("conceptnet.backoff_ms"));
  HttpTransport transport(cc.timeout_ms);
  ResponseCache cache(required_path(cfg, "conceptnet.cache_dir"));
  ConceptNetClient client(cc, transport, cache);
  const auto& stop = default_stopwords();
  for (const auto& w : words) {
    if (w.empty() || stop.contains(w) || !offline.neighbors(w).empty()) continue;
    if (w.find('/') != std::string::npos || w.front() == '.') continue;
    try {
      const auto fetched = client.query(w);
      edges.insert(edges.end(), fetched.begin(), fetched.end());
    } catch (const RetriableError& e) {
      note(g, std::string("conceptnet: ") + e.what() + "; using offline edges only");
    }
  }
}

std::unique_ptr<ConceptSource> load_knowledge(const RunConfig& cfg, const ModelConfig& mc, const Globals& g,
                                              const std::vector<const Dataset*>& datasets) {
  const fs::path cache = cfg.path("knowledge.cache");
  if (!cache.empty()) return std::make_unique<ConceptCache>(ConceptCache::load(cache, mc.concept_dim));
  const fs::path nb = cfg.path("knowledge.numberbatch");
  const fs::path ed = cfg.path("knowledge.edges");
  if (nb.empty() || ed.empty()) {
    throw ConfigError("knowledge features enabled: set knowledge.cache, or knowledge.numberbatch and knowledge.edges");
  }
  EmbeddingTable table = load_numberbatch(nb, cfg.str("knowledge.language"), mc.concept_dim);
  std::vector<ConceptEdge> edges = load_edge_dump(ed);
  if (cfg.flag("conceptnet.enabled")) augment_with_api(cfg, g, datasets, edges);
  return std::make_unique<KnowledgeBase>(std::move(table), EdgeIndex(edges), mc.concept_k, mc.relations);
}

std::map<std::string, std::string> knowledge_provenance(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const char* key : {"knowledge.cache", "knowledge.numberbatch", "knowledge.edges", "knowledge.stopwords"}) {
    const fs::path p = cfg.path(key);
    if (!p.empty()) out[key] = fs::absolute(p).lexically_normal().string();
  }
  out["knowledge.language"] = cfg.str("knowledge.language");
  return out;
}

TrainOptions train_options(const RunConfig& cfg, const Globals& g, const std::string& label) {
  TrainOptions o;
  o.patience = cfg.uint("train.patience");
  o.stage1_epochs = cfg.uint("train.stage1_epochs");
  o.epochs = cfg.uint("train.epochs");
  o.on_warning = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
  if (!g.quiet) {
    o.on_epoch = [label](const EpochLog& e) {
      std::cerr << label << "epoch " << e.epoch << " stage " << e.stage << " loss " << e.train_loss << " val_acc "
                << e.val.accuracy << "\n";
    };
  }
  return o;
}

int cmd_knowledge_build(const Globals& g, std::string numberbatch, std::string edges, std::string vocab,
                        std::string out) {
  RunConfig cfg = load_run_config(g, false, "knowledge-build");
  const auto pick = [&](const std::string& given, const std::string& key) {
    return given.empty() ? cfg.path(key) : fs::path(given);
  };
  const fs::path nb = pick(numberbatch, "knowledge.numberbatch");
  const fs::path ed = pick(edges, "knowledge.edges");
  const fs::path vp = pick(vocab, "knowledge.vocab");
  const fs::path op = pick(out, "knowledge.out");
  if (nb.empty() || ed.empty() || vp.empty() || op.empty()) {
    throw ConfigError("knowledge-build: numberbatch, edges, vocab and out paths are required");
  }
  const ModelConfig mc = cfg.model_config();
  KnowledgeBase kb(load_numberbatch(nb, cfg.str("knowledge.language"), mc.concept_dim), EdgeIndex(load_edge_dump(ed)),
                   mc.concept_k, mc.relations);
  const std::set<std::string> words = load_word_list(vp);
  io::write_file_atomic(op, build_concept_cache({words.begin(), words.end()}, kb));
  note(g, "knowledge-build: " + std::to_string(words.size()) + " words -> " + op.string());
  return 0;
}

int cmd_train(const Globals& g) {
  const RunConfig cfg = load_run_config(g, true, "train");
  const ModelConfig mc = cfg.model_config();
  const AblationFlags flags = cfg.flags();
  const fs::path model_out = required_path(cfg, "train.model_out");
  const fs::path log_out = required_path(cfg, "train.log_out");

  const auto features = load_features(cfg);
  const FeatureMap* fm = features ? &*features : nullptr;
  const Dataset train_set = load_split(cfg, "data.train", Split::kTrain, fm);
  const Dataset val_set = load_split(cfg, "data.val", Split::kVal, fm);
  if (train_set.empty()) throw DataError("train: training set is empty");
  if (val_set.empty()) throw DataError("train: validation set is empty");

  std::unique_ptr<ConceptSource> kb;
  if (flags.word_level_active()) kb = load_knowledge(cfg, mc, g, {&train_set, &val_set});
  const auto stopwords = load_stopwords(cfg);

  TrainResult result = train(mc, train_set, val_set, flags, train_options(cfg, g, ""), kb.get(), stopwords);
  result.state.flags = flags;
  if (kb) result.state.provenance = knowledge_provenance(cfg);

  const auto val = prepare_dataset(val_set, result.state.vocab, mc, kb.get(), stopwords);
  const Metrics m = evaluate(val, result.state, flags);

  // Outputs are written only after everything above succeeded.
  save_model(model_out, result.state);
  io::write_file_atomic(log_out, format_epoch_log(result.log));
  std::cout << metrics_to_json(m).dump() << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& model_path, const std::string& data_path) {
  const ModelState state = load_model(model_path);
  Dataset data = load_dataset(data_path, Split::kTest);
  if (data.empty()) throw DataError("eval: " + data_path + " contains no samples");

  std::optional<RunConfig> cfg;
  if (!g.config_path.empty()) cfg = load_run_config(g, true, "eval");
  if (cfg) {
    if (auto features = load_features(*cfg)) attach_image_features(data, *features);
  }

  std::unique_ptr<ConceptSource> kb;
  std::set<std::string> stopwords = default_stopwords();
  if (state.flags.word_level_active()) {
    RunConfig k = cfg ? *cfg : RunConfig();
    if (!cfg) {
      for (const auto& [key, value] : state.provenance) {
        if (key.starts_with("knowledge.")) k.set(key, value);
      }
    }
    kb = load_knowledge(k, state.config, g, {&data});
    stopwords = load_stopwords(k);
  }
  const auto prepared = prepare_dataset(data, state.vocab, state.config, kb.get(), stopwords);
  std::cout << metrics_to_json(evaluate(prepared, state, state.flags)).dump() << "\n";
  return 0;
}

std::string variant_slug(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  return out;
}

int cmd_ablate(const Globals& g) {
  const RunConfig cfg = load_run_config(g, true, "ablate");
  const ModelConfig mc = cfg.model_config();
  const fs::path report_out = required_path(cfg, "ablate.report_out");
  const fs::path log_dir = required_path(cfg, "ablate.log_dir");

  const auto features = load_features(cfg);
  const FeatureMap* fm = features ? &*features : nullptr;
  const Dataset train_set = load_split(cfg, "data.train", Split::kTrain, fm);
  const Dataset val_set = load_split(cfg, "data.val", Split::kVal, fm);
  const Dataset test_set = load_split(cfg, "data.test", Split::kTest, fm);

  std::unique_ptr<ConceptSource> kb = load_knowledge(cfg, mc, g, {&train_set, &val_set, &test_set});
  const auto stopwords = load_stopwords(cfg);
  const AblationRun run =
      run_ablation(mc, train_set, val_set, test_set, train_options(cfg, g, "[ablate] "), kb.get(), stopwords);

  fs::create_directories(log_dir);
  int exit_code = 0;
  for (std::size_t i = 0; i < run.report.rows.size(); ++i) {
    const auto& row = run.report.rows[i];
    if (!row.error.empty()) {
      std::cerr << "variant '" << row.name << "' failed: " << row.error << "\n";
      if (exit_code == 0) exit_code = exit_code_for(row.error_kind);
      continue;
    }
    io::write_file_atomic(log_dir / (variant_slug(row.name) + ".jsonl"), format_epoch_log(run.results[i].log));
  }
  io::write_file_atomic(report_out, ablation_to_json(run.report).dump(2) + "\n");
  std::cout << format_ablation_table(run.report);
  return exit_code;
}

int cmd_report(const Globals& g, const std::string& report_path) {
  fs::path p = report_path;
  if (p.empty()) p = required_path(load_run_config(g, true, "report"), "ablate.report_out");
  const std::string text = io::read_file(p, ErrorKind::kConfig);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  std::cout << format_ablation_table(ablation_from_json(j));
  return 0;
}

std::string config_key_help() {
  std::string out = "Config keys (JSON object of dotted keys; defaults shown):\n";
  for (const auto& k : config_keys()) {
    std::string name = k.name;
    if (name.size() < 28) name.resize(28, ' ');
    out += "  " + name + " " + (k.default_value.empty() ? "\"\"" : k.default_value) + "\n      " + k.help + "\n";
  }
  out += "\nExit codes: 0 ok, 2 config/format error, 3 data error, 4 numerical error.\n";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal irony detection with knowledge-enhanced semantic similarity", "semirnet"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(config_key_help());

  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  auto* seed_opt = app.add_option("--seed", g.seed, "override train.seed");
  app.add_flag("--quiet", g.quiet, "suppress progress output on stderr");

  std::string nb, edges, vocab, out;
  auto* kb_cmd = app.add_subcommand("knowledge-build", "expand and embed a word list into a concept cache");
  kb_cmd->add_option("--numberbatch", nb, "Numberbatch file (default: knowledge.numberbatch)");
  kb_cmd->add_option("--edges", edges, "edge dump CSV (default: knowledge.edges)");
  kb_cmd->add_option("--vocab", vocab, "word list, one per line (default: knowledge.vocab)");
  kb_cmd->add_option("--out", out, "output cache (default: knowledge.out)");

  auto* train_cmd = app.add_subcommand("train", "train a model; prints validation metrics as JSON");

  std::string model_path, data_path;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model file on a dataset; prints metrics as JSON");
  eval_cmd->add_option("--model", model_path, "model file")->required();
  eval_cmd->add_option("--data", data_path, "dataset (JSON lines)")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "train the full model and its three ablations; prints a table");

  std::string report_path;
  auto* report_cmd = app.add_subcommand("report", "re-print the table of a saved ablation report");
  report_cmd->add_option("--report", report_path, "ablation report JSON (default: ablate.report_out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*kb_cmd) return cmd_knowledge_build(g, nb, edges, vocab, out);
    if (*train_cmd) return cmd_train(g);
    if (*eval_cmd) return cmd_eval(g, model_path, data_path);
    if (*ablate_cmd) return cmd_ablate(g);
    if (*report_cmd) return cmd_report(g, report_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
