#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semirnet/error.hpp"
#include "semirnet/io.hpp"
#include "semirnet/knowledge.hpp"

namespace semirnet {

struct AblationFlags {
  bool use_knowledge = true;
  bool use_semantic = true;
  bool use_contrastive = true;

  static AblationFlags full() { return {}; }
  static AblationFlags without_knowledge() { return {false, true, true}; }
  static AblationFlags without_semantic() { return {true, false, true}; }
  static AblationFlags without_contrastive() { return {true, true, false}; }
  static AblationFlags none() { return {false, false, false}; }

  /// Word-level concept features are live only with both switches on.
  bool word_level_active() const { return use_semantic && use_knowledge; }

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// Hyperparameters. Defaults marked "ref" match the reference
/// configuration; the dimensions default to desk-scale values.
struct ModelConfig {
  std::size_t hidden_dim = 64;        // ref: 768
  std::size_t embed_dim = 64;
  std::size_t shared_dim = 64;
  std::size_t fused_dim = 64;
  std::size_t concept_dim = kConceptDim;  // ref: 300
  std::size_t max_len = 128;              // ref: 128 tokens
  std::size_t image_feature_dim = 0;      // 0 = attribute-word image path only
  double lambda = 0.1;                    // ref
  double margin = 0.5;                    // ref
  double learning_rate = 1e-5;            // ref
  std::size_t batch_size = 32;            // ref
  double mask_ratio = 0.15;               // ref
  std::size_t concept_k = 5;
  std::set<std::string> relations = default_relation_filter();
  double momentum = 0.9;
  double eps = 1e-5;
  std::uint64_t seed = 42;
  std::string triplet_mining = "random";  // or "hard"
  // Recorded for provenance only; raw images are never decoded.
  bool augment_random_crop = true;
  bool augment_hflip = true;
  bool augment_normalize = true;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("model.lambda must be >= 0");
    if (!(margin > 0.0)) throw ConfigError("model.margin must be > 0");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ConfigError("train.mask_ratio must lie in [0,1]");
    if (hidden_dim == 0 || embed_dim == 0 || shared_dim == 0 || fused_dim == 0 || concept_dim == 0 ||
        max_len == 0 || batch_size == 0) {
      throw ConfigError("all dimensions and sizes must be positive");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
    if (!(momentum > 0.0 && momentum <= 1.0)) throw ConfigError("model.momentum must lie in (0,1]");
    if (!(eps > 0.0)) throw ConfigError("model.eps must be > 0");
    if (triplet_mining != "random" && triplet_mining != "hard") {
      throw ConfigError("train.triplet_mining must be 'random' or 'hard'");
    }
  }
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every recognised config key, with its default.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> kKeys{
      {"model.hidden_dim", "64", "encoder output width d_h (reference value 768)"},
      {"model.embed_dim", "64", "token embedding width"},
      {"model.shared_dim", "64", "shared-space width d_s per modality"},
      {"model.fused_dim", "64", "fused embedding / classifier width d_f"},
      {"model.concept_dim", "300", "concept vector dimension (reference value 300)"},
      {"model.max_len", "128", "token truncation length (reference value 128)"},
      {"model.image_feature_dim", "0", "dimension of precomputed image vectors (0 = attribute words only)"},
      {"model.lambda", "0.1", "triplet loss weight (reference value 0.1)"},
      {"model.margin", "0.5", "triplet margin (reference value 0.5)"},
      {"model.concept_k", "5", "related concepts per word"},
      {"model.relations", "HasProperty,IsA,RelatedTo,Synonym,UsedFor", "relation filter for expansion"},
      {"model.momentum", "0.9", "weight of the newest batch in running mapping statistics"},
      {"model.eps", "1e-05", "ridge added before the inverse square root"},
      {"model.use_knowledge", "true", "enable concept-derived word-level features"},
      {"model.use_semantic", "true", "enable word- and sample-level similarity features"},
      {"model.use_contrastive", "true", "enable the triplet loss term"},
      {"model.augment.random_crop", "true", "image augmentation flag (metadata only)"},
      {"model.augment.hflip", "true", "image augmentation flag (metadata only)"},
      {"model.augment.normalize", "true", "image augmentation flag (metadata only)"},
      {"train.learning_rate", "1e-05", "Adam learning rate (reference value 1e-5)"},
      {"train.batch_size", "32", "mini-batch size (reference value 32)"},
      {"train.mask_ratio", "0.15", "text token mask ratio (reference value 0.15)"},
      {"train.seed", "42", "base random seed"},
      {"train.patience", "5", "early-stopping patience in epochs"},
      {"train.stage1_epochs", "3", "maximum epochs of encoder pre-training"},
      {"train.epochs", "30", "maximum epochs of end-to-end training"},
      {"train.triplet_mining", "random", "triplet selection: random or hard"},
      {"train.model_out", "model.sirn", "model file written by train"},
      {"train.log_out", "train_log.jsonl", "epoch log written by train"},
      {"data.train", "", "training set (JSON lines)"},
      {"data.val", "", "validation set (JSON lines)"},
      {"data.test", "", "held-out test set (JSON lines, optional)"},
      {"data.image_features", "", "precomputed image feature file keyed by sample id (optional)"},
      {"knowledge.numberbatch", "", "Numberbatch embedding file"},
      {"knowledge.edges", "", "ConceptNet edge dump (CSV)"},
      {"knowledge.cache", "", "prebuilt concept cache from knowledge-build (alternative to the two above)"},
      {"knowledge.language", "en", "language filter for Numberbatch URIs"},
      {"knowledge.stopwords", "", "stopword list, one per line (default: built-in list)"},
      {"knowledge.vocab", "", "word list for knowledge-build"},
      {"knowledge.out", "concepts.jsonl", "output of knowledge-build"},
      {"conceptnet.enabled", "false", "query the ConceptNet REST API for words missing from the edge dump"},
      {"conceptnet.endpoint", "https://api.conceptnet.io", "ConceptNet API base URL"},
      {"conceptnet.timeout_ms", "5000", "API timeout in milliseconds"},
      {"conceptnet.cache_dir", "conceptnet_cache", "persistent API response cache directory"},
      {"conceptnet.max_retries", "3", "retries after HTTP 429"},
      {"conceptnet.backoff_ms", "1000", "initial backoff after HTTP 429"},
      {"ablate.report_out", "ablation.json", "ablation results written by ablate"},
      {"ablate.log_dir", "ablation_logs", "per-variant epoch logs written by ablate"},
  };
  return kKeys;
}

/// Flat dotted-key JSON configuration. Values are stored as JSON and
/// relative paths resolve against the config file's directory.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) {
      values_[k.name] = parse_default(k.default_value);
    }
  }

  static RunConfig from_json(const nlohmann::json& j, std::filesystem::path base_dir = {}) {
    RunConfig cfg;
    cfg.base_dir_ = std::move(base_dir);
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) cfg.set(it.key(), it.value());
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    const std::string text = io::read_file(path, ErrorKind::kConfig);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return from_json(j, std::filesystem::absolute(path).parent_path());
  }

  void set(const std::string& key, nlohmann::json value) {
    if (!values_.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
    values_[key] = std::move(value);
  }

  std::string str(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_string()) throw ConfigError("config: '" + key + "' must be a string");
    return v.get<std::string>();
  }

  double num(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_number()) throw ConfigError("config: '" + key + "' must be a number");
    return v.get<double>();
  }

  std::uint64_t uint(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
      throw ConfigError("config: '" + key + "' must be a non-negative integer");
    }
    if (v.is_number_integer() && v.get<long long>() < 0) {
      throw ConfigError("config: '" + key + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool flag(const std::string& key) const {
    const auto& v = at(key);
    if (!v.is_boolean()) throw ConfigError("config: '" + key + "' must be true or false");
    return v.get<bool>();
  }

  /// Resolved path, or empty when the key is unset.
  std::filesystem::path path(const std::string& key) const {
    const std::string s = str(key);
    if (s.empty()) return {};
    std::filesystem::path p(s);
    if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
    return p.lexically_normal();
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.hidden_dim = uint("model.hidden_dim");
    m.embed_dim = uint("model.embed_dim");
    m.shared_dim = uint("model.shared_dim");
    m.fused_dim = uint("model.fused_dim");
    m.concept_dim = uint("model.concept_dim");
    m.max_len = uint("model.max_len");
    m.image_feature_dim = uint("model.image_feature_dim");
    m.lambda = num("model.lambda");
    m.margin = num("model.margin");
    m.concept_k = uint("model.concept_k");
    m.relations.clear();
    const std::string relations = str("model.relations");
    for (auto r : io::split_on(relations, ',')) {
      const auto t = io::trim(r);
      if (!t.empty()) m.relations.emplace(t);
    }
    m.momentum = num("model.momentum");
    m.eps = num("model.eps");
    m.learning_rate = num("train.learning_rate");
    m.batch_size = uint("train.batch_size");
    m.mask_ratio = num("train.mask_ratio");
    m.seed = uint("train.seed");
    m.triplet_mining = str("train.triplet_mining");
    m.augment_random_crop = flag("model.augment.random_crop");
    m.augment_hflip = flag("model.augment.hflip");
    m.augment_normalize = flag("model.augment.normalize");
    m.validate();
    return m;
  }

  AblationFlags flags() const {
    return {flag("model.use_knowledge"), flag("model.use_semantic"), flag("model.use_contrastive")};
  }

  const std::map<std::string, nlohmann::json>& values() const noexcept { return values_; }

 private:
  static nlohmann::json parse_default(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    if (auto i = io::parse_int(s)) return *i;
    if (auto d = io::parse_double(s)) return *d;
    return s;
  }

  const nlohmann::json& at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
  }

  std::map<std::string, nlohmann::json> values_;
  std::filesystem::path base_dir_;
};

/// Canonical key-sorted `key=value` text of a model configuration.
inline std::string canonical_config_text(const ModelConfig& m, const AblationFlags& flags,
                                         const std::map<std::string, std::string>& extra = {}) {
  std::map<std::string, std::string> kv = extra;
  kv["model.hidden_dim"] = std::to_string(m.hidden_dim);
  kv["model.embed_dim"] = std::to_string(m.embed_dim);
  kv["model.shared_dim"] = std::to_string(m.shared_dim);
  kv["model.fused_dim"] = std::to_string(m.fused_dim);
  kv["model.concept_dim"] = std::to_string(m.concept_dim);
  kv["model.max_len"] = std::to_string(m.max_len);
  kv["model.image_feature_dim"] = std::to_string(m.image_feature_dim);
  kv["model.lambda"] = io::format_double(m.lambda);
  kv["model.margin"] = io::format_double(m.margin);
  kv["model.concept_k"] = std::to_string(m.concept_k);
  std::string rel;
  for (const auto& r : m.relations) rel += (rel.empty() ? "" : ",") + r;
  kv["model.relations"] = rel;
  kv["model.momentum"] = io::format_double(m.momentum);
  kv["model.eps"] = io::format_double(m.eps);
  kv["model.use_knowledge"] = flags.use_knowledge ? "true" : "false";
  kv["model.use_semantic"] = flags.use_semantic ? "true" : "false";
  kv["model.use_contrastive"] = flags.use_contrastive ? "true" : "false";
  kv["model.augment.random_crop"] = m.augment_random_crop ? "true" : "false";
  kv["model.augment.hflip"] = m.augment_hflip ? "true" : "false";
  kv["model.augment.normalize"] = m.augment_normalize ? "true" : "false";
  kv["train.learning_rate"] = io::format_double(m.learning_rate);
  kv["train.batch_size"] = std::to_string(m.batch_size);
  kv["train.mask_ratio"] = io::format_double(m.mask_ratio);
  kv["train.seed"] = std::to_string(m.seed);
  kv["train.triplet_mining"] = m.triplet_mining;
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

/// Inverse of canonical_config_text.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model config block: line without '='");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::pair<ModelConfig, AblationFlags> model_config_from_text(const std::map<std::string, std::string>& kv) {
  const auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("model config block: missing key '" + k + "'");
    return it->second;
  };
  const auto u = [&](const std::string& k) {
    auto v = io::parse_int(get(k));
    if (!v || *v < 0) throw FormatError("model config block: bad integer for '" + k + "'");
    return static_cast<std::size_t>(*v);
  };
  const auto d = [&](const std::string& k) {
    auto v = io::parse_double(get(k));
    if (!v) throw FormatError("model config block: bad number for '" + k + "'");
    return *v;
  };
  const auto b = [&](const std::string& k) { return get(k) == "true"; };
  ModelConfig m;
  m.hidden_dim = u("model.hidden_dim");
  m.embed_dim = u("model.embed_dim");
  m.shared_dim = u("model.shared_dim");
  m.fused_dim = u("model.fused_dim");
  m.concept_dim = u("model.concept_dim");
  m.max_len = u("model.max_len");
  m.image_feature_dim = u("model.image_feature_dim");
  m.lambda = d("model.lambda");
  m.margin = d("model.margin");
  m.concept_k = u("model.concept_k");
  m.relations.clear();
  const std::string relations = get("model.relations");
  for (auto r : io::split_on(relations, ',')) {
    if (!r.empty()) m.relations.emplace(r);
  }
  m.momentum = d("model.momentum");
  m.eps = d("model.eps");
  m.augment_random_crop = b("model.augment.random_crop");
  m.augment_hflip = b("model.augment.hflip");
  m.augment_normalize = b("model.augment.normalize");
  m.learning_rate = d("train.learning_rate");
  m.batch_size = u("train.batch_size");
  m.mask_ratio = d("train.mask_ratio");
  auto seed = io::parse_uint(get("train.seed"));
  if (!seed) throw FormatError("model config block: bad seed");
  m.seed = *seed;
  m.triplet_mining = get("train.triplet_mining");
  AblationFlags f{b("model.use_knowledge"), b("model.use_semantic"), b("model.use_contrastive")};
  return {m, f};
}

}  // namespace semirnet
