#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "semirnet/autodiff.hpp"
#include "semirnet/gradcheck.hpp"
#include "semirnet/linalg.hpp"
#include "semirnet/rng.hpp"
#include "semirnet/tensor.hpp"

using namespace semirnet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

Tensor random_psd(std::size_t n, Rng& rng) {
  const Tensor a = random_tensor({n, n}, rng);
  return matmul(a, transpose(a));
}

}  // namespace

// --- tensor / linalg -------------------------------------------------------

TEST(Tensor, RejectsDataShapeMismatch) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor::vector({1, 2}).item(), ShapeError);
}

TEST(Cosine, IdenticalAndOrthogonal) {
  const std::vector<double> e1{1, 0}, e2{0, 1};
  EXPECT_DOUBLE_EQ(cosine_similarity(e1, e1), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(e1, e2), 0.0);
}

TEST(Cosine, KnownValue) {
  // 4 / (sqrt5 * sqrt5)
  const std::vector<double> a{1, 2}, b{2, 1};
  EXPECT_NEAR(cosine_similarity(a, b), 0.8, 1e-15);
}

TEST(Cosine, ZeroVectorIsAnError) {
  const std::vector<double> a{0, 0}, b{1, 0};
  EXPECT_THROW(cosine_similarity(a, b), ZeroVectorError);
}

TEST(Cosine, BoundedOnRandomPairs) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const Tensor a = random_tensor({7}, rng), b = random_tensor({7}, rng);
    const double c = cosine_similarity(a.values(), b.values());
    EXPECT_GE(c, -1.0 - 1e-12);
    EXPECT_LE(c, 1.0 + 1e-12);
  }
}

TEST(Covariance, ConstantRowsGiveZero) {
  const Tensor rows = Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2});
  const Tensor cov = covariance(rows);
  for (double x : cov.values()) EXPECT_EQ(x, 0.0);
}

TEST(Covariance, UnbiasedTwoPointExample) {
  const Tensor cov = covariance(Tensor::matrix(2, 2, {0, 0, 2, 2}));
  EXPECT_EQ(cov, Tensor::matrix(2, 2, {2, 2, 2, 2}));
}

TEST(Covariance, NeedsTwoRows) {
  EXPECT_THROW(covariance(Tensor::matrix(1, 3, {1, 2, 3})), InvalidArgument);
}

TEST(Covariance, IsExactlySymmetric) {
  Rng rng(3);
  for (int s = 0; s < 20; ++s) {
    const Tensor cov = covariance(random_tensor({9, 5}, rng));
    EXPECT_EQ(cov, transpose(cov));
  }
}

TEST(InverseSqrt, IdentityWithTinyRidge) {
  const Tensor m = inverse_sqrt_psd(Tensor::identity(4), 1e-12);
  EXPECT_LT(max_abs_diff(m, Tensor::identity(4)), 1e-6);
}

TEST(InverseSqrt, DiagonalCase) {
  const Tensor m = inverse_sqrt_psd(Tensor::matrix(2, 2, {4, 0, 0, 9}), 1e-12);
  EXPECT_NEAR(m(0, 0), 0.5, 1e-6);
  EXPECT_NEAR(m(1, 1), 1.0 / 3.0, 1e-6);
  EXPECT_NEAR(m(0, 1), 0.0, 1e-12);
}

TEST(InverseSqrt, WhitensRandomPsdMatrices) {
  Rng rng(5);
  const double eps = 1e-5;
  for (int s = 0; s < 25; ++s) {
    const Tensor sigma = random_psd(3, rng);
    Tensor ridged = sigma;
    for (std::size_t i = 0; i < 3; ++i) ridged(i, i) += eps;
    const Tensor m = inverse_sqrt_psd(sigma, eps);
    EXPECT_LT(max_abs_diff(matmul(matmul(m, ridged), m), Tensor::identity(3)), 1e-8);
  }
}

TEST(InverseSqrt, RejectsAsymmetricInput) {
  EXPECT_THROW(inverse_sqrt_psd(Tensor::matrix(2, 2, {1, 0.5, 0, 1}), 1e-5), InvalidArgument);
}

TEST(InverseSqrt, RejectsNonFiniteInput) {
  EXPECT_THROW(inverse_sqrt_psd(Tensor::matrix(2, 2, {NAN, 0, 0, 1}), 1e-5), NumericalError);
}

TEST(InverseSqrt, RejectsIndefiniteInput) {
  EXPECT_THROW(inverse_sqrt_psd(Tensor::matrix(2, 2, {-1, 0, 0, 1}), 1e-5), NumericalError);
}

TEST(Eigen, ReconstructsInput) {
  Rng rng(8);
  for (int s = 0; s < 10; ++s) {
    const Tensor a = random_psd(5, rng);
    const EigenDecomposition e = symmetric_eigen(a);
    Tensor d({5, 5});
    for (std::size_t i = 0; i < 5; ++i) d(i, i) = e.values[i];
    const Tensor back = matmul(matmul(e.vectors, d), transpose(e.vectors));
    EXPECT_LT(max_abs_diff(back, a), 1e-10);
    for (std::size_t i = 1; i < 5; ++i) EXPECT_LE(e.values[i - 1], e.values[i]);
  }
}

// --- rng ---------------------------------------------------------------------

TEST(Rng, SameSeedSameStream) {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, BelowStaysInRange) {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
  EXPECT_EQ(r.below(1), 0u);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng r(4);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
}

// --- autodiff + grad check ---------------------------------------------------

TEST(GradCheck, SumHasUnitGradient) {
  const double err = grad_check([](Tape&, Var x) { return ops::sum(x); }, Tensor::vector({0.3, -1.2, 4.0}), 1e-5);
  EXPECT_LT(err, 1e-9);
}

TEST(GradCheck, SquaredNormAtOneTwo) {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1, 2}));
  const Var f = ops::dot(x, x);
  tape.backward(f);
  const Tensor g = tape.grad(x);
  EXPECT_NEAR(g[0], 2.0, 1e-12);
  EXPECT_NEAR(g[1], 4.0, 1e-12);
  EXPECT_LT(grad_check([](Tape&, Var v) { return ops::dot(v, v); }, Tensor::vector({1, 2}), 1e-5), 1e-6);
}

TEST(GradCheck, RejectsOutOfRangeStep) {
  EXPECT_THROW(grad_check([](Tape&, Var x) { return ops::sum(x); }, Tensor::vector({1}), 1e-2), InvalidArgument);
}

TEST(GradCheck, NonFiniteProbeIsAnError) {
  const auto f = [](Tape& t, Var x) {
    // 1/x is infinite at x = 0
    const double v = 1.0 / x.value()[0];
    return t.record(Tensor::scalar(v), {x}, [](Tape&, const Tensor&) {});
  };
  EXPECT_THROW(grad_check(f, Tensor::vector({0.0}), 1e-5), NumericalError);
}

TEST(GradCheck, ElementwiseOps) {
  Rng rng(21);
  for (int s = 0; s < 10; ++s) {
    std::vector<Tensor> in{random_tensor({4}, rng, 0.2, 1.0), random_tensor({4}, rng, -1.0, -0.2)};
    const TapeFunction f = [](Tape&, std::span<const Var> v) {
      const Var a = ops::mul(v[0], v[1]);
      const Var b = ops::sub(ops::add(a, v[0]), ops::scale(v[1], 0.3));
      return ops::sum(ops::relu(ops::abs(ops::add_scalar(b, 2.5))));
    };
    EXPECT_LT(grad_check(f, in, 1e-5).max_relative_error, 1e-7);
  }
}

TEST(GradCheck, MatmulLinearAndConcat) {
  Rng rng(22);
  std::vector<Tensor> in{random_tensor({3, 5}, rng), random_tensor({3}, rng), random_tensor({2}, rng),
                         random_tensor({3}, rng)};
  const TapeFunction f = [](Tape&, std::span<const Var> v) {
    const Var x = ops::concat({v[2], v[3]});
    const Var y = ops::linear(v[0], v[1], x);
    return ops::dot(y, y);
  };
  EXPECT_LT(grad_check(f, in, 1e-5).max_relative_error, 1e-7);
}

TEST(GradCheck, MatrixMatmul) {
  Rng rng(23);
  std::vector<Tensor> in{random_tensor({2, 3}, rng), random_tensor({3, 4}, rng)};
  const TapeFunction f = [](Tape&, std::span<const Var> v) {
    const Var m = ops::matmul(v[0], v[1]);
    return ops::sum(ops::mul(m, m));
  };
  EXPECT_LT(grad_check(f, in, 1e-5).max_relative_error, 1e-7);
}

TEST(GradCheck, NormalizationAndCosine) {
  Rng rng(24);
  for (int s = 0; s < 10; ++s) {
    std::vector<Tensor> in{random_tensor({5}, rng), random_tensor({5}, rng)};
    const TapeFunction f = [](Tape&, std::span<const Var> v) {
      const Var u = ops::l2_normalize(v[0]);
      return ops::add(ops::cosine_similarity(u, v[1]), ops::euclidean_distance(u, v[1]));
    };
    EXPECT_LT(grad_check(f, in, 1e-5).max_relative_error, 1e-6);
  }
}

TEST(GradCheck, SliceSplitStackGather) {
  Rng rng(25);
  std::vector<Tensor> in{random_tensor({6}, rng), random_tensor({4, 3}, rng)};
  const TapeFunction f = [](Tape&, std::span<const Var> v) {
    const std::size_t sizes[] = {2, 4};
    const auto parts = ops::split(v[0], sizes);
    const Var s = ops::slice(parts[1], 1, 3);
    const Var g = ops::gather_mean(v[1], {0, 2, 2, 3});
    const Var rows[] = {s, g};
    const Var stacked = ops::stack_rows(rows);
    return ops::add(ops::sum(ops::mul(stacked, stacked)), ops::dot(parts[0], parts[0]));
  };
  EXPECT_LT(grad_check(f, in, 1e-5).max_relative_error, 1e-7);
}

TEST(GradCheck, CrossEntropyAndMeanOf) {
  Rng rng(26);
  std::vector<Tensor> in{random_tensor({3, 2}, rng, -2.0, 2.0)};
  const TapeFunction f = [](Tape& t, std::span<const Var> v) {
    const Var y = t.constant(Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 0}));
    const Var ce = ops::softmax_cross_entropy(v[0], y);
    const Var terms[] = {ce, ops::mean(v[0])};
    return ops::mean_of(terms);
  };
  EXPECT_LT(grad_check(f, in, 1e-5).max_relative_error, 1e-7);
}

TEST(Autodiff, CrossEntropyOfUniformLogitsIsLn2) {
  Tape t;
  const Var ce = ops::softmax_cross_entropy(t.constant(Tensor::matrix(2, 2, {0, 0, 3, 3})),
                                            t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})));
  EXPECT_NEAR(ce.item(), std::log(2.0), 1e-15);
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  Tape t;
  const Var x = t.variable(Tensor::vector({3}));
  const Var y = ops::add(ops::mul(x, x), x);  // x^2 + x
  t.backward(ops::sum(y));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 7.0);
}

TEST(Autodiff, ConstantsGetNoGradient) {
  Tape t;
  const Var c = t.constant(Tensor::vector({2}));
  const Var x = t.variable(Tensor::vector({5}));
  t.backward(ops::sum(ops::mul(c, x)));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 2.0);
  EXPECT_DOUBLE_EQ(t.grad(c)[0], 0.0);
}

TEST(Autodiff, BackwardNeedsScalarRoot) {
  Tape t;
  const Var x = t.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Autodiff, MixingTapesIsRejected) {
  Tape a, b;
  EXPECT_THROW(ops::add(a.variable(Tensor::scalar(1)), b.variable(Tensor::scalar(2))), InvalidArgument);
}

TEST(Autodiff, KinkMarginTracksNearestNonzeroInput) {
  Tape t;
  const Var x = t.variable(Tensor::vector({0.5, -0.02, 0.0, 3.0}));
  ops::relu(x);
  EXPECT_DOUBLE_EQ(t.kink_margin(), 0.02);
}
