#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "semirnet/autodiff.hpp"
#include "semirnet/error.hpp"
#include "semirnet/linalg.hpp"
#include "semirnet/tensor.hpp"

namespace semirnet {

struct SimilarityFeatures {
  double word_max = 0.0;
  double word_mean = 0.0;
  double sample = 0.0;
  bool word_oov = false;
  bool sample_degenerate = false;
};

struct WordSimilarity {
  double max = 0.0;
  double mean = 0.0;
  bool oov = false;
};

namespace detail {

inline std::vector<std::size_t> nonzero_rows(const Tensor& m) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (l2_norm(m.row(r)) > 0.0) out.push_back(r);
  }
  return out;
}

}  // namespace detail

/// Cosine matrix between text-side and image-side concept rows. Returns
/// the global max and the mean over text rows of each row's best match.
/// Zero rows are ignored; if either side has none left, both are 0 (oov).
inline WordSimilarity word_level_similarity(const Tensor& text_concepts, const Tensor& image_concepts) {
  if (text_concepts.rank() != 2 || image_concepts.rank() != 2 ||
      text_concepts.cols() != image_concepts.cols()) {
    throw ShapeError("word_level_similarity: expected m x d and n x d matrices, got " +
                     shape_string(text_concepts.shape()) + " and " + shape_string(image_concepts.shape()));
  }
  const auto text_rows = detail::nonzero_rows(text_concepts);
  const auto image_rows = detail::nonzero_rows(image_concepts);
  if (text_rows.empty() || image_rows.empty()) return WordSimilarity{0.0, 0.0, true};

  const std::size_t d = text_concepts.cols();
  std::vector<double> image_norms;
  for (std::size_t j : image_rows) image_norms.push_back(l2_norm(image_concepts.row(j)));

  double global_max = -2.0;
  double row_max_sum = 0.0;
  for (std::size_t i : text_rows) {
    const auto a = text_concepts.row(i);
    const double na = l2_norm(a);
    double row_max = -2.0;
    for (std::size_t jj = 0; jj < image_rows.size(); ++jj) {
      const auto b = image_concepts.row(image_rows[jj]);
      double ab = 0.0;
      for (std::size_t k = 0; k < d; ++k) ab += a[k] * b[k];
      const double c = std::clamp(ab / (na * image_norms[jj]), -1.0, 1.0);
      row_max = std::max(row_max, c);
    }
    global_max = std::max(global_max, row_max);
    row_max_sum += row_max;
  }
  return WordSimilarity{global_max, row_max_sum / static_cast<double>(text_rows.size()), false};
}

enum class MappingMode { kTrain, kInfer };

/// Covariance-derived whitening map over the concatenated shared-space
/// features, with running statistics frozen at inference.
struct MappingState {
  Tensor mapping;         // d_z x d_z, symmetric
  Tensor running_mean;    // d_z
  Tensor running_cov;     // d_z x d_z, symmetric PSD
  double momentum = 0.9;  // weight given to the newest batch
  double eps = 1e-5;
  MappingMode mode = MappingMode::kTrain;
  std::size_t fits = 0;

  static MappingState initial(std::size_t dz, double momentum = 0.9, double eps = 1e-5) {
    return MappingState{Tensor::identity(dz), Tensor({dz}), Tensor::identity(dz), momentum, eps,
                        MappingMode::kTrain, 0};
  }

  std::size_t dimension() const { return running_mean.size(); }
};

/// Train mode: blends the batch mean/covariance into the running statistics
/// (the first fit copies them) and recomputes M = (Sigma + eps I)^(-1/2).
/// Infer mode: returns the state unchanged.
inline MappingState fit_mapping(const Tensor& z_batch, MappingState state) {
  if (state.mode == MappingMode::kInfer) return state;
  if (z_batch.rank() != 2 || z_batch.cols() != state.dimension()) {
    throw ShapeError("fit_mapping: batch shape " + shape_string(z_batch.shape()) +
                     " does not match mapping dimension " + std::to_string(state.dimension()));
  }
  if (z_batch.rows() < 2) {
    throw InvalidArgument("fit_mapping: insufficient samples (need n >= 2 in train mode, got " +
                          std::to_string(z_batch.rows()) + ")");
  }
  const Tensor mean = column_mean(z_batch);
  const Tensor cov = covariance(z_batch);
  if (state.fits == 0) {
    state.running_mean = mean;
    state.running_cov = cov;
  } else {
    const double m = state.momentum;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      state.running_mean[i] = (1.0 - m) * state.running_mean[i] + m * mean[i];
    }
    for (std::size_t i = 0; i < cov.size(); ++i) {
      state.running_cov[i] = (1.0 - m) * state.running_cov[i] + m * cov[i];
    }
  }
  state.mapping = inverse_sqrt_psd(state.running_cov, state.eps);
  ++state.fits;
  return state;
}

/// Tape handles for the shared-space projections.
struct SampleProjectionVars {
  Var text_weight;   // d_s x 2 d_h, applied to [t ; c]
  Var text_bias;     // d_s
  Var image_weight;  // d_s x d_h
  Var image_bias;    // d_s
};

/// Concatenated shared-space vector z = [proj(t ; c) ; proj(v)].
inline Var shared_space_features(Var t, Var c, Var v, const SampleProjectionVars& p) {
  const Var u = ops::linear(p.text_weight, p.text_bias, ops::concat({t, c}));
  const Var w = ops::linear(p.image_weight, p.image_bias, v);
  return ops::concat({u, w});
}

/// Centers z by the running mean, maps it by M (both constants), splits it
/// back into text and image halves and returns their cosine. A zero half
/// yields the constant 0 and sets `degenerate`.
inline Var mapped_similarity(Var z, const MappingState& state, bool* degenerate = nullptr) {
  Tape& tape = *z.tape;
  const std::size_t dz = state.dimension();
  if (z.value().size() != dz || dz % 2 != 0) {
    throw ShapeError("sample_level_similarity: feature length " + std::to_string(z.value().size()) +
                     " does not match mapping dimension " + std::to_string(dz));
  }
  const Var centered = ops::sub(z, tape.constant(state.running_mean));
  const Var mapped = ops::matmul(tape.constant(state.mapping), centered);
  const Var u = ops::slice(mapped, 0, dz / 2);
  const Var w = ops::slice(mapped, dz / 2, dz / 2);
  if (l2_norm(u.value().values()) == 0.0 || l2_norm(w.value().values()) == 0.0) {
    if (degenerate) *degenerate = true;
    return tape.constant(Tensor::scalar(0.0));
  }
  if (degenerate) *degenerate = false;
  return ops::cosine_similarity(u, w);
}

inline Var sample_level_similarity(Var t, Var c, Var v, const SampleProjectionVars& p,
                                   const MappingState& state, bool* degenerate = nullptr) {
  return mapped_similarity(shared_space_features(t, c, v, p), state, degenerate);
}

}  // namespace semirnet
