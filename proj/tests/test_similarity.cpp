#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "semirnet/gradcheck.hpp"
#include "semirnet/rng.hpp"
#include "semirnet/similarity.hpp"

using namespace semirnet;

namespace {

Tensor random_matrix(Rng& rng, std::size_t n, std::size_t d, double lo = -1.0, double hi = 1.0) {
  Tensor t({n, d});
  for (double& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

Tensor scaled_row(Tensor t, std::size_t r, double k) {
  for (double& x : t.row(r)) x *= k;
  return t;
}

// Covariance of M (z_i - mean) over the rows, computed directly.
Tensor whitened_covariance(const Tensor& z, const MappingState& s) {
  const std::size_t n = z.rows(), d = z.cols();
  Tensor mapped({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      double acc = 0.0;
      for (std::size_t b = 0; b < d; ++b) acc += s.mapping(a, b) * (z(i, b) - s.running_mean[b]);
      mapped(i, a) = acc;
    }
  }
  return covariance(mapped);
}

}  // namespace

TEST(WordSimilarity, IdenticalSingleRows) {
  const Tensor a = Tensor::matrix(1, 3, {0.2, -0.4, 1.0});
  const WordSimilarity s = word_level_similarity(a, a);
  EXPECT_DOUBLE_EQ(s.max, 1.0);
  EXPECT_DOUBLE_EQ(s.mean, 1.0);
  EXPECT_FALSE(s.oov);
}

TEST(WordSimilarity, OrthogonalSingleRows) {
  const WordSimilarity s = word_level_similarity(Tensor::matrix(1, 3, {1, 0, 0}), Tensor::matrix(1, 3, {0, 1, 0}));
  EXPECT_EQ(s.max, 0.0);
  EXPECT_EQ(s.mean, 0.0);
}

TEST(WordSimilarity, TwoByTwoFixture) {
  const double r = 1.0 / std::sqrt(2.0);
  const WordSimilarity s =
      word_level_similarity(Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::matrix(2, 2, {1, 0, r, r}));
  EXPECT_NEAR(s.max, 1.0, 1e-15);
  EXPECT_NEAR(s.mean, (1.0 + 0.70710678118654752) / 2.0, 1e-15);
}

TEST(WordSimilarity, ZeroRowsAreExcluded) {
  const WordSimilarity s =
      word_level_similarity(Tensor::matrix(2, 2, {0, 0, 1, 1}), Tensor::matrix(2, 2, {2, 2, 0, 0}));
  EXPECT_DOUBLE_EQ(s.max, 1.0);
  EXPECT_DOUBLE_EQ(s.mean, 1.0);
}

TEST(WordSimilarity, AllZeroSideIsOov) {
  const WordSimilarity s = word_level_similarity(Tensor({1, 4}), Tensor::matrix(1, 4, {1, 2, 3, 4}));
  EXPECT_TRUE(s.oov);
  EXPECT_EQ(s.max, 0.0);
  EXPECT_EQ(s.mean, 0.0);
}

TEST(WordSimilarity, ShapeMismatchIsRejected) {
  EXPECT_THROW(word_level_similarity(Tensor({1, 3}, 1.0), Tensor({1, 4}, 1.0)), ShapeError);
}

TEST(WordSimilarity, RandomPairsSatisfyBoundsOrderingSymmetryAndScaleInvariance) {
  Rng rng(1000);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.below(5), n = 1 + rng.below(5), d = 2 + rng.below(8);
    const Tensor a = random_matrix(rng, m, d), b = random_matrix(rng, n, d);
    const WordSimilarity ab = word_level_similarity(a, b);
    ASSERT_GE(ab.max, -1.0);
    ASSERT_LE(ab.max, 1.0);
    ASSERT_GE(ab.mean, -1.0);
    ASSERT_LE(ab.mean, ab.max + 1e-15);
    ASSERT_EQ(word_level_similarity(b, a).max, ab.max);

    const WordSimilarity scaled = word_level_similarity(scaled_row(a, rng.below(m), 7.3), scaled_row(b, rng.below(n), 7.3));
    ASSERT_NEAR(scaled.max, ab.max, 1e-9);
    ASSERT_NEAR(scaled.mean, ab.mean, 1e-9);
  }
}

TEST(Mapping, IdentityCovarianceAtFullMomentum) {
  // Rows +-sqrt(n-1)/sqrt(2) e_k give a zero mean and unit sample covariance.
  const double a = std::sqrt(3.0 / 2.0);
  const Tensor z = Tensor::matrix(4, 2, {a, 0, -a, 0, 0, a, 0, -a});
  const MappingState s = fit_mapping(z, MappingState::initial(2, 1.0, 1e-5));
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(s.mapping(0, 0), expected, 1e-12);
  EXPECT_NEAR(s.mapping(1, 1), expected, 1e-12);
  EXPECT_NEAR(s.mapping(0, 1), 0.0, 1e-12);
  EXPECT_EQ(s.fits, 1u);
}

TEST(Mapping, RankDeficientBatchStaysFinite) {
  const Tensor z = Tensor::matrix(4, 3, {1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6});
  const MappingState s = fit_mapping(z, MappingState::initial(3, 1.0, 1e-5));
  EXPECT_TRUE(s.mapping.all_finite());
}

TEST(Mapping, WhitensEightByFourBatch) {
  Rng rng(84);
  const Tensor z = random_matrix(rng, 8, 4);
  const MappingState s = fit_mapping(z, MappingState::initial(4, 1.0, 1e-5));
  EXPECT_LT(max_abs_diff(whitened_covariance(z, s), Tensor::identity(4)), 1e-3);
}

TEST(Mapping, WhitensAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const Tensor z = random_matrix(rng, 32, 8, -2.0, 3.0);
    const MappingState s = fit_mapping(z, MappingState::initial(8, 1.0, 1e-5));
    EXPECT_LT(max_abs_diff(whitened_covariance(z, s), Tensor::identity(8)), 1e-3) << "seed " << seed;
  }
}

TEST(Mapping, MomentumBlendsRunningStatistics) {
  Rng rng(3);
  const Tensor z1 = random_matrix(rng, 6, 2), z2 = random_matrix(rng, 6, 2);
  MappingState s = fit_mapping(z1, MappingState::initial(2, 0.25, 1e-5));
  s = fit_mapping(z2, s);
  const Tensor m1 = column_mean(z1), m2 = column_mean(z2);
  const Tensor c1 = covariance(z1), c2 = covariance(z2);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(s.running_mean[i], 0.75 * m1[i] + 0.25 * m2[i], 1e-15);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s.running_cov[i], 0.75 * c1[i] + 0.25 * c2[i], 1e-15);
  EXPECT_EQ(s.fits, 2u);
}

TEST(Mapping, InferModeLeavesStateUnchanged) {
  Rng rng(5);
  MappingState s = fit_mapping(random_matrix(rng, 5, 2), MappingState::initial(2));
  s.mode = MappingMode::kInfer;
  const MappingState after = fit_mapping(random_matrix(rng, 5, 2), s);
  EXPECT_EQ(after.mapping, s.mapping);
  EXPECT_EQ(after.running_mean, s.running_mean);
  EXPECT_EQ(after.fits, s.fits);
  // A single row is fine when nothing is fitted.
  EXPECT_NO_THROW(fit_mapping(Tensor({1, 2}, 1.0), s));
}

TEST(Mapping, TrainModeNeedsTwoSamples) {
  EXPECT_THROW(fit_mapping(Tensor({1, 2}, 1.0), MappingState::initial(2)), InvalidArgument);
  EXPECT_THROW(fit_mapping(Tensor({3, 3}, 1.0), MappingState::initial(2)), ShapeError);
}

TEST(MappedSimilarity, IdentityMapExamples) {
  const MappingState s = MappingState::initial(4);
  Tape tape;
  EXPECT_DOUBLE_EQ(mapped_similarity(tape.constant(Tensor::vector({1, 2, 1, 2})), s).item(), 1.0);
  EXPECT_DOUBLE_EQ(mapped_similarity(tape.constant(Tensor::vector({1, 0, 0, 3})), s).item(), 0.0);
}

TEST(MappedSimilarity, ZeroHalfIsDegenerate) {
  const MappingState s = MappingState::initial(4);
  Tape tape;
  bool degenerate = false;
  EXPECT_EQ(mapped_similarity(tape.constant(Tensor::vector({0, 0, 1, 1})), s, &degenerate).item(), 0.0);
  EXPECT_TRUE(degenerate);
  mapped_similarity(tape.constant(Tensor::vector({1, 0, 1, 1})), s, &degenerate);
  EXPECT_FALSE(degenerate);
}

TEST(MappedSimilarity, ScaleInvariantUnderZeroMeanMapping) {
  Rng rng(73);
  MappingState s = MappingState::initial(6);
  s.mapping = fit_mapping(random_matrix(rng, 10, 6), MappingState::initial(6, 1.0)).mapping;
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor z({6});
    for (double& x : z.values()) x = rng.uniform(-1, 1);
    Tensor z7 = z;
    for (double& x : z7.values()) x *= 7.3;
    Tape tape;
    const double a = mapped_similarity(tape.constant(z), s).item();
    const double b = mapped_similarity(tape.constant(z7), s).item();
    ASSERT_GE(a, -1.0);
    ASSERT_LE(a, 1.0);
    ASSERT_NEAR(a, b, 1e-9);
  }
}

TEST(MappedSimilarity, LengthMismatchIsRejected) {
  Tape tape;
  EXPECT_THROW(mapped_similarity(tape.constant(Tensor({5}, 1.0)), MappingState::initial(4)), ShapeError);
}

TEST(SampleSimilarity, GradientsMatchFiniteDifferences) {
  const std::size_t dh = 3, ds = 2;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::vector<Tensor> inputs;
    for (const Shape& shape : std::vector<Shape>{{dh}, {dh}, {dh}, {ds, 2 * dh}, {ds}, {ds, dh}, {ds}}) {
      Tensor t(shape);
      for (double& x : t.values()) x = rng.uniform(-1, 1);
      inputs.push_back(t);
    }
    const MappingState state = fit_mapping(random_matrix(rng, 6, 2 * ds), MappingState::initial(2 * ds, 1.0));
    const TapeFunction f = [&state](Tape&, std::span<const Var> v) {
      return sample_level_similarity(v[0], v[1], v[2], {v[3], v[4], v[5], v[6]}, state);
    };
    EXPECT_LT(grad_check(f, inputs, 1e-5).max_relative_error, 1e-4) << "seed " << seed;
  }
}
