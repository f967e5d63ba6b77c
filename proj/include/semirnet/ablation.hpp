#pragma once

#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "semirnet/config.hpp"
#include "semirnet/dataset.hpp"
#include "semirnet/error.hpp"
#include "semirnet/knowledge.hpp"
#include "semirnet/model.hpp"
#include "semirnet/training.hpp"

namespace semirnet {

struct AblationVariant {
  std::string name;
  AblationFlags flags;
};

/// Full model first; deltas are taken against it.
inline std::vector<AblationVariant> ablation_variants() {
  return {{"full", AblationFlags::full()},
          {"w/o Knowledge", AblationFlags::without_knowledge()},
          {"w/o Semantic", AblationFlags::without_semantic()},
          {"w/o Contrastive", AblationFlags::without_contrastive()}};
}

struct AblationRow {
  std::string name;
  AblationFlags flags;
  std::optional<Metrics> val;
  std::optional<Metrics> test;
  std::size_t epochs_run = 0;
  std::string error;  // non-empty when the variant failed
  ErrorKind error_kind = ErrorKind::kConfig;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  const AblationRow* full() const {
    for (const auto& r : rows) {
      if (r.name == "full") return &r;
    }
    return nullptr;
  }
};

struct AblationRun {
  AblationReport report;
  std::vector<TrainResult> results;  // parallel to report.rows; empty state on failure
};

/// Trains every variant from one shared stage-1 state, so the deltas
/// isolate the ablated component rather than initialization noise.
/// A failing variant is recorded and does not stop the others.
inline AblationRun run_ablation(const ModelConfig& config, const Dataset& train_set, const Dataset& val_set,
                                const Dataset& test_set, const TrainOptions& options, const ConceptSource* knowledge,
                                const std::set<std::string>& stopwords = default_stopwords(),
                                const std::vector<AblationVariant>& variants = ablation_variants()) {
  if (train_set.empty()) throw DataError("ablate: empty training set");
  if (val_set.empty()) throw DataError("ablate: empty validation set");
  if (test_set.empty()) throw DataError("ablate: empty test set");
  config.validate();
  warn_if_single_class(train_set, options);
  const Vocab vocab = build_vocab(train_set);
  const auto train_plain = prepare_dataset(train_set, vocab, config, nullptr, stopwords);
  const auto val_plain = prepare_dataset(val_set, vocab, config, nullptr, stopwords);
  const TrainResult stage1 = pretrain_encoders(config, vocab, train_plain, val_plain, options);

  std::optional<std::vector<PreparedSample>> train_kb, val_kb, test_kb;
  const auto test_plain = prepare_dataset(test_set, vocab, config, nullptr, stopwords);
  if (knowledge) {
    train_kb = prepare_dataset(train_set, vocab, config, knowledge, stopwords);
    val_kb = prepare_dataset(val_set, vocab, config, knowledge, stopwords);
    test_kb = prepare_dataset(test_set, vocab, config, knowledge, stopwords);
  }

  AblationRun run;
  for (const auto& variant : variants) {
    AblationRow row{variant.name, variant.flags, std::nullopt, std::nullopt, 0, "", ErrorKind::kConfig};
    try {
      const bool kb = variant.flags.word_level_active();
      if (kb && !knowledge) throw ConfigError("variant '" + variant.name + "' needs concept tables");
      const auto& tr = kb ? *train_kb : train_plain;
      const auto& va = kb ? *val_kb : val_plain;
      const auto& te = kb ? *test_kb : test_plain;
      TrainResult result = finetune(stage1, tr, va, variant.flags, options);
      row.val = evaluate(va, result.state, variant.flags);
      row.test = evaluate(te, result.state, variant.flags);
      row.epochs_run = result.epochs_run;
      run.results.push_back(std::move(result));
    } catch (const Error& e) {
      row.error = e.what();
      row.error_kind = e.kind();
      run.results.push_back(TrainResult{});
    }
    run.report.rows.push_back(std::move(row));
  }
  return run;
}

inline nlohmann::json ablation_to_json(const AblationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json j{{"name", r.name},
                     {"use_knowledge", r.flags.use_knowledge},
                     {"use_semantic", r.flags.use_semantic},
                     {"use_contrastive", r.flags.use_contrastive},
                     {"epochs_run", r.epochs_run}};
    if (r.val) j["val"] = metrics_to_json(*r.val);
    if (r.test) j["test"] = metrics_to_json(*r.test);
    if (!r.error.empty()) j["error"] = r.error;
    rows.push_back(std::move(j));
  }
  return nlohmann::json{{"rows", rows}};
}

inline AblationReport ablation_from_json(const nlohmann::json& j) {
  AblationReport report;
  try {
    for (const auto& r : j.at("rows")) {
      AblationRow row;
      row.name = r.at("name").get<std::string>();
      row.flags = {r.at("use_knowledge").get<bool>(), r.at("use_semantic").get<bool>(),
                   r.at("use_contrastive").get<bool>()};
      row.epochs_run = r.at("epochs_run").get<std::size_t>();
      if (r.contains("val")) row.val = metrics_from_json(r["val"]);
      if (r.contains("test")) row.test = metrics_from_json(r["test"]);
      if (r.contains("error")) row.error = r["error"].get<std::string>();
      report.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("ablation report: ") + e.what());
  }
  return report;
}

namespace detail {
inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}
inline std::string signed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%+.4f", v);
  return buf;
}
}  // namespace detail

/// Plain-text table of held-out metrics and deltas against the full model.
inline std::string format_ablation_table(const AblationReport& report) {
  std::string out = "variant          Acc     F1      Macro-F1  dAcc     dF1      dMacro-F1\n";
  const AblationRow* full = report.full();
  for (const auto& r : report.rows) {
    std::string name = r.name;
    name.resize(16, ' ');
    out += name + " ";
    if (!r.test) {
      out += "FAILED: " + r.error + "\n";
      continue;
    }
    const Metrics& m = *r.test;
    out += detail::fixed4(m.accuracy) + "  " + detail::fixed4(m.f1) + "  " + detail::fixed4(m.macro_f1) + "    ";
    if (full && full->test) {
      out += detail::signed4(m.accuracy - full->test->accuracy) + "  " + detail::signed4(m.f1 - full->test->f1) +
             "  " + detail::signed4(m.macro_f1 - full->test->macro_f1);
    } else {
      out += "n/a      n/a      n/a";
    }
    out += "\n";
  }
  out += "(held-out split; ratios with a zero denominator are reported as 0)\n";
  return out;
}

}  // namespace semirnet
