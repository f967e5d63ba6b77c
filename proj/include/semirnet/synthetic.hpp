#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semirnet/config.hpp"
#include "semirnet/dataset.hpp"
#include "semirnet/error.hpp"
#include "semirnet/io.hpp"
#include "semirnet/knowledge.hpp"
#include "semirnet/rng.hpp"

namespace semirnet {

/// Knobs for the synthetic irony task. Every post has a text topic and an
/// image topic; the post is ironic exactly when the two disagree. Part of
/// each topic's vocabulary only appears in the held-out splits, so the
/// encoders never see those words and only the concept tables can relate
/// them to their topic.
struct SyntheticConfig {
  std::size_t topics = 4;
  std::size_t samples = 2000;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::size_t text_words = 15;     // per topic, seen in training
  std::size_t attr_words = 15;     // per topic, seen in training
  std::size_t held_out_words = 15; // per topic and side, val/test only
  double held_out_rate = 0.5;      // chance a val/test word comes from the held-out pool
  std::size_t text_len = 4;
  std::size_t attr_len = 3;
  std::size_t caption_len = 3;
  double ironic_rate = 0.5;
  double concept_noise = 0.6;      // spread of word vectors around their topic centroid
  double coverage = 0.5;           // chance a word has a concept vector and edges
  double hub_rate = 1.0;           // chance a covered word is linked to its topic hub
  std::size_t concept_dim = kConceptDim;
  std::uint64_t seed = 7;
};

struct SyntheticTask {
  Dataset train, val, test;
  EmbeddingTable table{kConceptDim, "en"};
  std::vector<ConceptEdge> edges;
};

namespace detail {

inline std::string topic_word(const char* side, std::size_t topic, std::size_t i) {
  return std::string(side) + std::to_string(topic) + "_" + std::to_string(i);
}

inline std::vector<double> unit_gaussian(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double s = 0.0;
  for (double& x : v) {
    x = rng.normal();
    s += x * x;
  }
  const double n = std::sqrt(s);
  for (double& x : v) x /= n;
  return v;
}

}  // namespace detail

inline SyntheticTask make_synthetic_task(const SyntheticConfig& cfg) {
  if (cfg.topics < 2) throw InvalidArgument("synthetic: need at least two topics");
  if (cfg.train_fraction <= 0.0 || cfg.val_fraction <= 0.0 || cfg.train_fraction + cfg.val_fraction >= 1.0) {
    throw InvalidArgument("synthetic: split fractions must leave room for a test split");
  }
  Rng rng(mix_seed(cfg.seed));
  SyntheticTask task;
  task.table = EmbeddingTable(cfg.concept_dim, "en");

  const std::size_t pool = std::max(cfg.text_words, cfg.attr_words) + cfg.held_out_words;
  const double spread = cfg.concept_noise / std::sqrt(static_cast<double>(cfg.concept_dim));
  for (std::size_t k = 0; k < cfg.topics; ++k) {
    const std::vector<double> centroid = detail::unit_gaussian(rng, cfg.concept_dim);
    const std::string hub = "topic" + std::to_string(k);
    task.table.insert(hub, centroid);
    for (const char* side : {"w", "a", "c"}) {
      for (std::size_t i = 0; i < pool; ++i) {
        std::vector<double> v = centroid;
        for (double& x : v) x += spread * rng.normal();
        if (rng.uniform() >= cfg.coverage) continue;
        const std::string w = detail::topic_word(side, k, i);
        task.table.insert(w, std::move(v));
        if (rng.uniform() < cfg.hub_rate) task.edges.push_back({w, "RelatedTo", hub, 2.0});
        // One same-topic neighbour, so expansions are not just the hub.
        task.edges.push_back({w, "Synonym", detail::topic_word(side, k, rng.below(pool)), 1.0});
      }
    }
  }

  const auto draw = [&](const char* side, std::size_t topic, std::size_t seen, std::size_t count, bool held_out) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t idx;
      if (held_out && cfg.held_out_words > 0 && rng.uniform() < cfg.held_out_rate) {
        idx = pool - cfg.held_out_words + rng.below(cfg.held_out_words);
      } else {
        idx = rng.below(seen);
      }
      out.push_back(detail::topic_word(side, topic, idx));
    }
    return out;
  };

  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.samples)));
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(cfg.samples)));
  task.train.split = Split::kTrain;
  task.val.split = Split::kVal;
  task.test.split = Split::kTest;
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const bool held_out = i >= n_train;
    const std::size_t text_topic = rng.below(cfg.topics);
    const int label = rng.uniform() < cfg.ironic_rate ? 1 : 0;
    std::size_t image_topic = text_topic;
    if (label == 1) image_topic = (text_topic + 1 + rng.below(cfg.topics - 1)) % cfg.topics;

    Sample s;
    s.id = "s" + std::to_string(i);
    s.text = draw("w", text_topic, cfg.text_words, cfg.text_len, held_out);
    s.text.insert(s.text.begin() + static_cast<std::ptrdiff_t>(rng.below(s.text.size() + 1)), "so");
    s.caption = draw("c", image_topic, cfg.attr_words, cfg.caption_len, held_out);
    s.caption.insert(s.caption.begin(), "a");
    s.image_attrs = draw("a", image_topic, cfg.attr_words, cfg.attr_len, held_out);
    s.label = label;
    Dataset& target = i < n_train ? task.train : (i < n_train + n_val ? task.val : task.test);
    target.samples.push_back(std::move(s));
  }
  return task;
}

/// Small model and schedule that suit the synthetic task on one CPU core.
inline ModelConfig synthetic_model_config() {
  ModelConfig m;
  m.hidden_dim = 16;
  m.embed_dim = 16;
  m.shared_dim = 8;
  m.fused_dim = 16;
  m.learning_rate = 1e-3;
  return m;
}

inline constexpr std::size_t kSyntheticPatience = 8;

/// Run configuration for the files written by write_synthetic_task.
inline nlohmann::json synthetic_run_config_json() {
  const ModelConfig m = synthetic_model_config();
  return nlohmann::json{{"model.hidden_dim", m.hidden_dim},
                        {"model.embed_dim", m.embed_dim},
                        {"model.shared_dim", m.shared_dim},
                        {"model.fused_dim", m.fused_dim},
                        {"train.learning_rate", m.learning_rate},
                        {"train.patience", kSyntheticPatience},
                        {"data.train", "train.jsonl"},
                        {"data.val", "val.jsonl"},
                        {"data.test", "test.jsonl"},
                        {"knowledge.numberbatch", "numberbatch.txt"},
                        {"knowledge.edges", "edges.csv"}};
}

/// Writes train/val/test JSONL, a Numberbatch text file and an edge CSV.
inline void write_synthetic_task(const SyntheticTask& task, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "train.jsonl", format_dataset(task.train));
  io::write_file_atomic(dir / "val.jsonl", format_dataset(task.val));
  io::write_file_atomic(dir / "test.jsonl", format_dataset(task.test));
  io::write_file_atomic(dir / "numberbatch.txt", format_numberbatch(task.table));
  io::write_file_atomic(dir / "edges.csv", format_edge_dump(task.edges));
  io::write_file_atomic(dir / "config.json", synthetic_run_config_json().dump(2) + "\n");
}

}  // namespace semirnet
