#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semirnet/autodiff.hpp"
#include "semirnet/config.hpp"
#include "semirnet/dataset.hpp"
#include "semirnet/error.hpp"
#include "semirnet/linalg.hpp"
#include "semirnet/model.hpp"
#include "semirnet/rng.hpp"

namespace semirnet {

// --- metrics -------------------------------------------------------------

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

/// Positive class is ironic (label 1). Ratios with a zero denominator are 0.
struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double macro_f1 = 0.0;
  Confusion confusion;
};

namespace detail {
inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
inline double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }
}  // namespace detail

inline Metrics metrics_from_confusion(const Confusion& c) {
  Metrics m;
  m.confusion = c;
  m.accuracy = detail::ratio(c.tp + c.tn, c.total());
  m.precision = detail::ratio(c.tp, c.tp + c.fp);
  m.recall = detail::ratio(c.tp, c.tp + c.fn);
  m.f1 = detail::harmonic(m.precision, m.recall);
  const double p0 = detail::ratio(c.tn, c.tn + c.fn);
  const double r0 = detail::ratio(c.tn, c.tn + c.fp);
  m.macro_f1 = (m.f1 + detail::harmonic(p0, r0)) / 2.0;
  return m;
}

inline Confusion confusion_from(std::span<const int> predicted, std::span<const int> actual) {
  if (predicted.size() != actual.size()) throw InvalidArgument("confusion: length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == 1 && actual[i] == 1) ++c.tp;
    else if (predicted[i] == 1) ++c.fp;
    else if (actual[i] == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
  return nlohmann::json{{"accuracy", m.accuracy},
                        {"precision", m.precision},
                        {"recall", m.recall},
                        {"f1", m.f1},
                        {"macro_f1", m.macro_f1},
                        {"tp", m.confusion.tp},
                        {"fp", m.confusion.fp},
                        {"fn", m.confusion.fn},
                        {"tn", m.confusion.tn}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.macro_f1 = j.at("macro_f1").get<double>();
  m.confusion = {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("fn").get<std::size_t>(),
                 j.at("tn").get<std::size_t>()};
  return m;
}

/// Runs inference in batches (no masking) and scores the predictions.
inline Metrics evaluate(std::span<const PreparedSample> data, const ModelState& state, const AblationFlags& flags,
                        std::size_t batch_size = 64) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  std::vector<int> predicted, actual;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const auto batch = data.subspan(start, std::min(batch_size, data.size() - start));
    const Inference inf = infer(state, batch, flags);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      predicted.push_back(predict_from_logits(inf.logits(i, 0), inf.logits(i, 1)).label);
      actual.push_back(batch[i].label);
    }
  }
  return metrics_from_confusion(confusion_from(predicted, actual));
}

// --- triplets ------------------------------------------------------------

/// One triple per anchor that has another same-label sample and a
/// different-label sample; positive and negative drawn uniformly.
inline std::vector<Triplet> sample_triplets(std::span<const int> labels, Rng& rng) {
  std::vector<Triplet> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? pos : neg).push_back(j);
    }
    if (pos.empty() || neg.empty()) continue;
    const std::size_t p = pos[rng.below(pos.size())];
    const std::size_t n = neg[rng.below(neg.size())];
    out.push_back({i, p, n});
  }
  return out;
}

/// Hardest positive (farthest) and hardest negative (closest) per anchor;
/// ties go to the lower index.
inline std::vector<Triplet> mine_hard_triplets(std::span<const int> labels, std::span<const Tensor> embeddings) {
  std::vector<Triplet> out;
  const auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < embeddings[a].size(); ++k) {
      const double d = embeddings[a][k] - embeddings[b][k];
      s += d * d;
    }
    return s;
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::optional<std::size_t> p, n;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (!p || dist(i, j) > dist(i, *p)) p = j;
      } else if (!n || dist(i, j) < dist(i, *n)) {
        n = j;
      }
    }
    if (p && n) out.push_back({i, *p, *n});
  }
  return out;
}

// --- Adam ----------------------------------------------------------------

struct AdamState {
  std::map<std::string, Tensor> first;
  std::map<std::string, Tensor> second;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update over every parameter that has a gradient.
inline void adam_step(ParamSet& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw InvalidArgument("adam_step: learning rate must be > 0");
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw InvalidArgument("adam_step: gradient for unknown parameter '" + name + "'");
    require_same_shape(it->second, g, "adam_step");
    if (!g.all_finite()) throw NumericalError("adam_step: non-finite gradient for parameter '" + name + "'");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor& w = params.at(name);
    auto [m_it, m_new] = state.first.try_emplace(name, Tensor(g.shape()));
    auto [v_it, v_new] = state.second.try_emplace(name, Tensor(g.shape()));
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

// --- training loop -------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;  // global, 0-based
  int stage = 0;
  double train_loss = 0.0;
  Metrics val;
};

struct TrainOptions {
  std::size_t patience = 5;
  std::size_t stage1_epochs = 3;
  std::size_t epochs = 30;
  /// Called after every epoch; useful for progress output.
  std::function<void(const EpochLog&)> on_epoch;
  /// Receives non-fatal diagnostics, e.g. a single-class training set.
  std::function<void(const std::string&)> on_warning;
};

/// Warns when every training label is the same; no triplets can be formed.
inline void warn_if_single_class(const Dataset& train_set, const TrainOptions& options) {
  const auto counts = train_set.label_counts();
  if ((counts[0] == 0 || counts[1] == 0) && options.on_warning) {
    options.on_warning("training set has a single class; the triplet term will be empty");
  }
}

inline nlohmann::json epoch_log_to_json(const EpochLog& e) {
  return nlohmann::json{{"epoch", e.epoch}, {"stage", e.stage}, {"train_loss", e.train_loss},
                        {"val", metrics_to_json(e.val)}};
}

inline std::string format_epoch_log(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) out += epoch_log_to_json(e).dump() + "\n";
  return out;
}

struct TrainResult {
  ModelState state;
  std::vector<EpochLog> log;
  std::size_t epochs_run = 0;
};

namespace detail {

/// Shuffled batches of indices; a trailing singleton joins the previous
/// batch so every batch can be used to fit covariance statistics.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

/// One optimization step on a batch; returns the batch loss.
inline double train_batch(ModelState& state, AdamState& adam, std::span<const PreparedSample> batch,
                          const AblationFlags& flags, Rng& rng) {
  Tape tape;
  const ParamVars p = bind_params(tape, state.params, true);
  MappingState mapping = state.mapping;
  ForwardOutput out = forward(tape, p, batch, mapping, state.config, flags, ForwardMode::kTrain);

  std::vector<int> labels;
  for (const auto& s : batch) labels.push_back(s.label);
  // Triplets are always drawn so the rng stream does not depend on flags.
  std::vector<Triplet> triplets;
  if (state.config.triplet_mining == "hard") {
    std::vector<Tensor> emb;
    for (const auto& e : out.embeddings) emb.push_back(e.value());
    triplets = mine_hard_triplets(labels, emb);
  } else {
    triplets = sample_triplets(labels, rng);
  }
  const Var loss = total_loss(out.logits, labels, out.embeddings, triplets, state.config, flags);
  if (!std::isfinite(loss.item())) throw NumericalError("training: non-finite loss");
  tape.backward(loss);

  std::map<std::string, Tensor> grads;
  for (const auto& [name, v] : p) grads.emplace(name, tape.grad(v));
  adam_step(state.params, grads, adam, state.config.learning_rate);
  state.mapping = std::move(mapping);
  return loss.item();
}

inline std::vector<PreparedSample> masked_copy(std::span<const PreparedSample> data,
                                               std::span<const std::size_t> idx, double ratio, Rng& rng) {
  std::vector<PreparedSample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    PreparedSample s = data[i];
    s.text = apply_text_mask(std::move(s.text), ratio, rng);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Trains one stage with early stopping on validation accuracy. Stops when
/// `patience` consecutive epochs fail to improve (patience 0: one epoch).
/// Returns the best state seen in this stage.
inline TrainResult run_stage(int stage, ModelState start, std::span<const PreparedSample> train_data,
                             std::span<const PreparedSample> val_data, const AblationFlags& flags,
                             std::size_t max_epochs, std::size_t patience, std::size_t first_epoch,
                             const TrainOptions& options = {}) {
  TrainResult result{start, {}, 0};
  ModelState current = std::move(start);
  AdamState adam;
  double best_acc = -1.0;
  std::size_t stale = 0;
  for (std::size_t e = 0; e < max_epochs; ++e) {
    const std::size_t epoch = first_epoch + e;
    Rng rng(current.config.seed ^ static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& idx : detail::make_batches(train_data.size(), current.config.batch_size, rng)) {
      const auto batch = detail::masked_copy(train_data, idx, current.config.mask_ratio, rng);
      loss_sum += detail::train_batch(current, adam, batch, flags, rng);
      ++batches;
    }
    EpochLog entry{epoch, stage, loss_sum / static_cast<double>(batches), evaluate(val_data, current, flags)};
    result.log.push_back(entry);
    ++result.epochs_run;
    if (options.on_epoch) options.on_epoch(entry);
    if (entry.val.accuracy > best_acc) {
      best_acc = entry.val.accuracy;
      result.state = current;
      stale = 0;
    } else {
      ++stale;
    }
    if (stale >= patience) break;
  }
  return result;
}

/// Flags used while pre-training the encoders: cross-entropy only.
inline AblationFlags stage1_flags() { return AblationFlags::none(); }

/// Stage 1: encoders + classifier with cross-entropy only.
inline TrainResult pretrain_encoders(const ModelConfig& config, const Vocab& vocab,
                                     std::span<const PreparedSample> train_data,
                                     std::span<const PreparedSample> val_data, const TrainOptions& options) {
  ModelState init = init_model(config, vocab);
  if (options.stage1_epochs == 0) return TrainResult{std::move(init), {}, 0};
  return run_stage(1, std::move(init), train_data, val_data, stage1_flags(), options.stage1_epochs,
                   options.patience, 0, options);
}

/// Stage 3: end-to-end training with the requested flags, starting from a
/// stage-1 state. The returned state is the best of this stage.
inline TrainResult finetune(const TrainResult& stage1, std::span<const PreparedSample> train_data,
                            std::span<const PreparedSample> val_data, const AblationFlags& flags,
                            const TrainOptions& options) {
  ModelState start = stage1.state;
  start.flags = flags;
  TrainResult r = run_stage(3, std::move(start), train_data, val_data, flags, options.epochs, options.patience,
                            stage1.epochs_run, options);
  std::vector<EpochLog> log = stage1.log;
  log.insert(log.end(), r.log.begin(), r.log.end());
  r.log = std::move(log);
  r.epochs_run += stage1.epochs_run;
  r.state.flags = flags;
  return r;
}

/// Full staged schedule. Stage 2 (loading concept vectors) is the
/// `knowledge` argument: word-level features are attached to every
/// sample between the two gradient stages.
inline TrainResult train(const ModelConfig& config, const Dataset& train_set, const Dataset& val_set,
                         const AblationFlags& flags, const TrainOptions& options, const ConceptSource* knowledge,
                         const std::set<std::string>& stopwords = default_stopwords()) {
  if (train_set.empty()) throw DataError("train: empty training set");
  if (val_set.empty()) throw DataError("train: empty validation set");
  config.validate();
  warn_if_single_class(train_set, options);
  const Vocab vocab = build_vocab(train_set);
  const auto train_plain = prepare_dataset(train_set, vocab, config, nullptr, stopwords);
  const auto val_plain = prepare_dataset(val_set, vocab, config, nullptr, stopwords);
  const TrainResult stage1 = pretrain_encoders(config, vocab, train_plain, val_plain, options);

  const ConceptSource* kb = flags.word_level_active() ? knowledge : nullptr;
  if (flags.word_level_active() && !kb) throw ConfigError("train: knowledge enabled but no concept tables supplied");
  const auto train_data = prepare_dataset(train_set, vocab, config, kb, stopwords);
  const auto val_data = prepare_dataset(val_set, vocab, config, kb, stopwords);
  return finetune(stage1, train_data, val_data, flags, options);
}

}  // namespace semirnet
