#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "semirnet/autodiff.hpp"
#include "semirnet/config.hpp"
#include "semirnet/dataset.hpp"
#include "semirnet/encoders.hpp"
#include "semirnet/error.hpp"
#include "semirnet/gradcheck.hpp"
#include "semirnet/knowledge.hpp"
#include "semirnet/rng.hpp"
#include "semirnet/similarity.hpp"
#include "semirnet/tensor.hpp"

namespace semirnet {

using ParamSet = std::map<std::string, Tensor>;
using ParamVars = std::map<std::string, Var>;

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Everything needed to run or resume the classifier.
struct ModelState {
  ModelConfig config;
  AblationFlags flags;
  Vocab vocab;
  ParamSet params;
  MappingState mapping;
  /// Free-form provenance recorded in the model file (e.g. knowledge paths).
  std::map<std::string, std::string> provenance;
};

/// Width of the concatenated fusion input [t, c, v, |t-v|, t*v, sim(3)].
inline std::size_t fusion_width(const ModelConfig& c) { return 5 * c.hidden_dim + 3; }

/// Parameter names and shapes, in initialization order.
inline std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c, std::size_t vocab_size) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const char* path : {"text", "caption", "image"}) {
    const std::string p(path);
    out.push_back({p + ".embedding", {vocab_size, c.embed_dim}});
    out.push_back({p + ".proj.weight", {c.hidden_dim, c.embed_dim}});
    out.push_back({p + ".proj.bias", {c.hidden_dim}});
  }
  if (c.image_feature_dim > 0) {
    out.push_back({"image.pre.weight", {c.hidden_dim, c.image_feature_dim}});
    out.push_back({"image.pre.bias", {c.hidden_dim}});
  }
  out.push_back({"sim.text.weight", {c.shared_dim, 2 * c.hidden_dim}});
  out.push_back({"sim.text.bias", {c.shared_dim}});
  out.push_back({"sim.image.weight", {c.shared_dim, c.hidden_dim}});
  out.push_back({"sim.image.bias", {c.shared_dim}});
  out.push_back({"fuse.weight", {c.fused_dim, fusion_width(c)}});
  out.push_back({"fuse.bias", {c.fused_dim}});
  out.push_back({"head.hidden.weight", {c.fused_dim, c.fused_dim}});
  out.push_back({"head.hidden.bias", {c.fused_dim}});
  out.push_back({"head.out.weight", {2, c.fused_dim}});
  out.push_back({"head.out.bias", {2}});
  return out;
}

/// Embeddings ~ U(-0.5, 0.5); weights Glorot-uniform; biases zero.
inline ModelState init_model(const ModelConfig& config, Vocab vocab, const AblationFlags& flags = {}) {
  config.validate();
  ModelState state;
  state.config = config;
  state.flags = flags;
  state.vocab = std::move(vocab);
  state.mapping = MappingState::initial(2 * config.shared_dim, config.momentum, config.eps);
  Rng rng(mix_seed(config.seed));
  for (const auto& [name, shape] : parameter_layout(config, state.vocab.size())) {
    Tensor t(shape);
    if (name.ends_with(".embedding")) {
      for (double& x : t.values()) x = rng.uniform(-0.5, 0.5);
    } else if (name.ends_with(".weight")) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (double& x : t.values()) x = rng.uniform(-limit, limit);
    }
    state.params.emplace(name, std::move(t));
  }
  return state;
}

/// Records every parameter on the tape, as variables or constants.
inline ParamVars bind_params(Tape& tape, const ParamSet& params, bool trainable) {
  ParamVars vars;
  for (const auto& [name, t] : params) vars.emplace(name, trainable ? tape.variable(t) : tape.constant(t));
  return vars;
}

inline const Var& param(const ParamVars& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw InvalidArgument("model: missing parameter '" + name + "'");
  return it->second;
}

/// Model input after tokenization and knowledge lookup. The word-level
/// similarity depends only on the words, so it is computed once here.
struct PreparedSample {
  std::vector<TokenId> text;
  std::vector<TokenId> caption;
  std::vector<TokenId> attrs;
  std::optional<Tensor> image_vec;
  int label = 0;
  WordSimilarity word;
  bool has_knowledge = false;
};

/// Builds the vocabulary from every token of a training set, in sorted order.
inline Vocab build_vocab(const Dataset& ds) {
  std::set<std::string> words;
  for (const auto& s : ds.samples) {
    words.insert(s.text.begin(), s.text.end());
    words.insert(s.caption.begin(), s.caption.end());
    words.insert(s.image_attrs.begin(), s.image_attrs.end());
  }
  Vocab v;
  for (const auto& w : words) v.add(w);
  return v;
}

/// Word-level features from the text words against the image attribute words.
inline WordSimilarity word_features(const Sample& s, const ConceptSource& knowledge,
                                    const std::set<std::string>& stopwords) {
  return word_level_similarity(concept_matrix(s.text, knowledge, stopwords),
                               concept_matrix(s.image_attrs, knowledge, stopwords));
}

/// Empty text, caption or attribute lists are encoded as a single UNK.
inline PreparedSample prepare_sample(const Sample& s, const Vocab& vocab, const ModelConfig& config,
                                     const ConceptSource* knowledge, const std::set<std::string>& stopwords) {
  const auto ids = [&](const std::vector<std::string>& words) {
    std::vector<TokenId> out = vocab.encode(words);
    if (out.empty()) out.push_back(Vocab::kUnk);
    return out;
  };
  PreparedSample p;
  p.text = ids(s.text);
  p.caption = ids(s.caption);
  p.attrs = ids(s.image_attrs);
  p.label = s.label;
  if (s.image_vec && config.image_feature_dim > 0) {
    if (s.image_vec->size() != config.image_feature_dim) {
      throw ShapeError("sample '" + s.id + "': image_vec has dimension " + std::to_string(s.image_vec->size()) +
                       ", expected " + std::to_string(config.image_feature_dim));
    }
    p.image_vec = Tensor::vector(*s.image_vec);
  }
  if (knowledge) {
    p.word = word_features(s, *knowledge, stopwords);
    p.has_knowledge = true;
  }
  return p;
}

inline std::vector<PreparedSample> prepare_dataset(const Dataset& ds, const Vocab& vocab, const ModelConfig& config,
                                                   const ConceptSource* knowledge,
                                                   const std::set<std::string>& stopwords) {
  std::vector<PreparedSample> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples) out.push_back(prepare_sample(s, vocab, config, knowledge, stopwords));
  return out;
}

enum class ForwardMode { kTrain, kInfer };

struct ForwardOutput {
  Var logits;                   // n x 2
  std::vector<Var> fused;       // pre-normalization fused vectors, d_f each
  std::vector<Var> embeddings;  // L2-normalized fused vectors
  std::vector<SimilarityFeatures> similarity;
};

struct EncodedSample {
  Var t, c, v;
};

inline EncodedSample encode_sample(const PreparedSample& s, const ParamVars& p, const ModelConfig& config) {
  const TokenEncoderVars text{param(p, "text.embedding"), param(p, "text.proj.weight"), param(p, "text.proj.bias")};
  const TokenEncoderVars caption{param(p, "caption.embedding"), param(p, "caption.proj.weight"),
                                 param(p, "caption.proj.bias")};
  ImageEncoderVars image{{param(p, "image.embedding"), param(p, "image.proj.weight"), param(p, "image.proj.bias")},
                         std::nullopt};
  if (config.image_feature_dim > 0) {
    image.precomputed = VectorEncoderVars{param(p, "image.pre.weight"), param(p, "image.pre.bias")};
  }
  EncodedSample e;
  e.t = encode_text(s.text, text, config.max_len);
  e.c = encode_text(s.caption, caption, config.max_len);
  e.v = s.image_vec ? encode_image(*s.image_vec, image, config.max_len)
                    : encode_image(s.attrs, image, config.max_len);
  return e;
}

/// Batch forward pass. In train mode with semantic features on, the
/// mapping statistics are refit on this batch before the sample-level
/// similarity is computed; they enter the graph as constants.
inline ForwardOutput forward(Tape& tape, const ParamVars& p, std::span<const PreparedSample> batch,
                             MappingState& mapping, const ModelConfig& config, const AblationFlags& flags,
                             ForwardMode mode) {
  if (batch.empty()) throw InvalidArgument("forward: empty batch");
  if (flags.word_level_active()) {
    for (const auto& s : batch) {
      if (!s.has_knowledge) throw ConfigError("forward: knowledge features requested but no concept tables loaded");
    }
  }
  const std::size_t n = batch.size();
  std::vector<EncodedSample> enc;
  enc.reserve(n);
  for (const auto& s : batch) enc.push_back(encode_sample(s, p, config));

  std::vector<Var> sample_sim(n);
  std::vector<bool> degenerate(n, false);
  if (flags.use_semantic) {
    const SampleProjectionVars proj{param(p, "sim.text.weight"), param(p, "sim.text.bias"),
                                    param(p, "sim.image.weight"), param(p, "sim.image.bias")};
    std::vector<Var> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = shared_space_features(enc[i].t, enc[i].c, enc[i].v, proj);
    if (mode == ForwardMode::kTrain) {
      const std::size_t dz = mapping.dimension();
      Tensor zb({n, dz});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dz; ++j) zb(i, j) = z[i].value()[j];
      }
      MappingState train_state = mapping;
      train_state.mode = MappingMode::kTrain;
      mapping = fit_mapping(zb, std::move(train_state));
    } else if (mapping.fits == 0) {
      throw ConfigError("forward: mapping statistics were never fitted; train the model first");
    }
    for (std::size_t i = 0; i < n; ++i) {
      bool deg = false;
      sample_sim[i] = mapped_similarity(z[i], mapping, &deg);
      degenerate[i] = deg;
    }
  }

  ForwardOutput out;
  std::vector<Var> logit_rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = batch[i];
    SimilarityFeatures sim;
    Var sample_term = tape.constant(Tensor::scalar(0.0));
    if (flags.use_semantic) {
      if (flags.use_knowledge) {
        sim.word_max = s.word.max;
        sim.word_mean = s.word.mean;
        sim.word_oov = s.word.oov;
      }
      sim.sample = sample_sim[i].item();
      sim.sample_degenerate = degenerate[i];
      sample_term = sample_sim[i];
    }
    const Var word_terms = tape.constant(Tensor::vector({sim.word_max, sim.word_mean}));
    const Var& t = enc[i].t;
    const Var& v = enc[i].v;
    const Var x = ops::concat({t, enc[i].c, v, ops::abs(ops::sub(t, v)), ops::mul(t, v), word_terms, sample_term});
    const Var fused = ops::linear(param(p, "fuse.weight"), param(p, "fuse.bias"), x);
    const Var hidden = ops::relu(ops::linear(param(p, "head.hidden.weight"), param(p, "head.hidden.bias"), fused));
    logit_rows.push_back(ops::linear(param(p, "head.out.weight"), param(p, "head.out.bias"), hidden));
    out.fused.push_back(fused);
    if (l2_norm(fused.value().values()) > 0.0) {
      out.embeddings.push_back(ops::l2_normalize(fused));
    } else {
      out.embeddings.push_back(tape.constant(Tensor(fused.value().shape())));
    }
    out.similarity.push_back(sim);
  }
  out.logits = ops::stack_rows(logit_rows);
  return out;
}

/// Inference convenience: forward on a private tape with frozen mapping.
struct Inference {
  Tensor logits;
  std::vector<Tensor> embeddings;
  std::vector<SimilarityFeatures> similarity;
};

inline Inference infer(const ModelState& state, std::span<const PreparedSample> batch, const AblationFlags& flags) {
  Tape tape;
  const ParamVars p = bind_params(tape, state.params, false);
  MappingState mapping = state.mapping;
  mapping.mode = MappingMode::kInfer;
  ForwardOutput out = forward(tape, p, batch, mapping, state.config, flags, ForwardMode::kInfer);
  Inference inf{out.logits.value(), {}, std::move(out.similarity)};
  for (const auto& e : out.embeddings) inf.embeddings.push_back(e.value());
  return inf;
}

// --- losses --------------------------------------------------------------

/// max(0, d(a,p) - d(a,n) + margin) with euclidean d.
inline Var triplet_loss(Var anchor, Var positive, Var negative, double margin) {
  const Var gap = ops::sub(ops::euclidean_distance(anchor, positive), ops::euclidean_distance(anchor, negative));
  return ops::relu(ops::add_scalar(gap, margin));
}

inline double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                           double margin) {
  Tape tape;
  return triplet_loss(tape.constant(Tensor::vector({a.begin(), a.end()})),
                      tape.constant(Tensor::vector({p.begin(), p.end()})),
                      tape.constant(Tensor::vector({n.begin(), n.end()})), margin)
      .item();
}

struct Triplet {
  std::size_t anchor, positive, negative;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

inline Tensor one_hot_labels(std::span<const int> labels) {
  Tensor y({labels.size(), 2});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw DataError("label must be 0 or 1, got " + std::to_string(labels[i]));
    }
    y(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return y;
}

/// CE + (use_contrastive ? lambda : 0) * mean triplet loss.
inline Var total_loss(Var logits, std::span<const int> labels, std::span<const Var> embeddings,
                      std::span<const Triplet> triplets, const ModelConfig& config, const AblationFlags& flags) {
  Tape& tape = *logits.tape;
  if (logits.value().rows() != labels.size()) throw ShapeError("total_loss: logits/labels size mismatch");
  const Var ce = ops::softmax_cross_entropy(logits, tape.constant(one_hot_labels(labels)));
  const double weight = flags.use_contrastive ? config.lambda : 0.0;
  if (weight == 0.0 || triplets.empty()) return ce;
  std::vector<Var> terms;
  for (const auto& tr : triplets) {
    if (tr.anchor >= embeddings.size() || tr.positive >= embeddings.size() || tr.negative >= embeddings.size()) {
      throw InvalidArgument("total_loss: triplet index out of range");
    }
    terms.push_back(triplet_loss(embeddings[tr.anchor], embeddings[tr.positive], embeddings[tr.negative],
                                 config.margin));
  }
  return ops::add(ce, ops::scale(ops::mean_of(terms), weight));
}

/// Batch loss as a function of every parameter tensor, in ParamSet (name)
/// order, with mapping statistics frozen at their current values. This is
/// the quantity checked against finite differences.
struct FrozenLoss {
  std::vector<std::string> names;
  std::vector<Tensor> values;
  TapeFunction fn;
};

inline FrozenLoss frozen_batch_loss(const ModelState& state, std::vector<PreparedSample> batch,
                                    std::vector<Triplet> triplets, const AblationFlags& flags) {
  FrozenLoss out;
  for (const auto& [name, t] : state.params) {
    out.names.push_back(name);
    out.values.push_back(t);
  }
  out.fn = [names = out.names, batch = std::move(batch), triplets = std::move(triplets), mapping = state.mapping,
            config = state.config, flags](Tape&, std::span<const Var> vars) {
    ParamVars p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], vars[i]);
    MappingState frozen = mapping;
    frozen.mode = MappingMode::kInfer;
    const ForwardOutput fo = forward(*vars[0].tape, p, batch, frozen, config, flags, ForwardMode::kInfer);
    std::vector<int> labels;
    for (const auto& s : batch) labels.push_back(s.label);
    return total_loss(fo.logits, labels, fo.embeddings, triplets, config, flags);
  };
  return out;
}

// --- prediction ----------------------------------------------------------

struct Prediction {
  int label = 0;
  double probability = 0.5;
};

/// Softmax over two logits; exact ties go to label 0 (non-ironic).
inline Prediction predict_from_logits(double non_ironic, double ironic) {
  const double mx = std::max(non_ironic, ironic);
  const double e0 = std::exp(non_ironic - mx);
  const double e1 = std::exp(ironic - mx);
  const int label = ironic > non_ironic ? 1 : 0;
  return {label, (label == 1 ? e1 : e0) / (e0 + e1)};
}

inline Prediction predict(const PreparedSample& sample, const ModelState& state, const AblationFlags& flags) {
  const Inference inf = infer(state, std::span<const PreparedSample>(&sample, 1), flags);
  return predict_from_logits(inf.logits(0, 0), inf.logits(0, 1));
}

}  // namespace semirnet
