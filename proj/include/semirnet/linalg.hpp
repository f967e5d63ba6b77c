#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "semirnet/error.hpp"
#include "semirnet/tensor.hpp"

namespace semirnet {

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// dot(a,b) / (|a| |b|). Throws ZeroVectorError when either norm is zero.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("cosine_similarity: inputs must be non-empty and of equal length");
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw ZeroVectorError("cosine_similarity: zero-norm input");
  return dot(a, b) / (na * nb);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += aip * b(p, j);
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected a matrix");
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

inline Tensor column_mean(const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("column_mean: expected a matrix");
  const std::size_t n = rows.rows(), d = rows.cols();
  Tensor mean({d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows(i, j);
  }
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
  return mean;
}

/// Unbiased sample covariance of the rows of an n x d matrix.
inline Tensor covariance(const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("covariance: expected an n x d matrix");
  const std::size_t n = rows.rows(), d = rows.cols();
  if (n < 2) throw InvalidArgument("covariance: insufficient samples (need n >= 2, got " +
                                   std::to_string(n) + ")");
  const Tensor mean = column_mean(rows);
  Tensor cov({d, d});
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered[j] = rows(i, j) - mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) cov(a, b) += centered[a] * centered[b];
    }
  }
  const double denom = static_cast<double>(n - 1);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= denom;
      cov(b, a) = cov(a, b);
    }
  }
  return cov;
}

inline double asymmetry(const Tensor& s) {
  double m = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t j = i + 1; j < s.cols(); ++j) m = std::max(m, std::abs(s(i, j) - s(j, i)));
  }
  return m;
}

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  Tensor vectors;              // column i is the eigenvector for values[i]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline EigenDecomposition symmetric_eigen(const Tensor& s, int max_sweeps = 100) {
  if (s.rank() != 2 || s.rows() != s.cols()) {
    throw ShapeError("symmetric_eigen: expected a square matrix, got " + shape_string(s.shape()));
  }
  const std::size_t n = s.rows();
  Tensor a = s;
  Tensor v = Tensor::identity(n);

  auto off_diagonal = [&] {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) sum += a(i, j) * a(i, j);
    }
    return sum;
  };
  double scale = 0.0;
  for (double x : a.values()) scale += x * x;

  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    const double off = off_diagonal();
    if (off == 0.0 || off <= 1e-30 * scale) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == max_sweeps) {
    std::ostringstream os;
    os << "symmetric_eigen: Jacobi iteration did not converge after " << max_sweeps
       << " sweeps (n=" << n << ", residual off-diagonal mass " << off_diagonal() << ")";
    throw NumericalError(os.str());
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  EigenDecomposition out{std::vector<double>(n), Tensor({n, n})};
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = a(order[i], order[i]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = v(k, order[i]);
  }
  return out;
}

/// (S + eps I)^(-1/2) for a symmetric positive semidefinite S.
inline Tensor inverse_sqrt_psd(const Tensor& s, double eps) {
  if (s.rank() != 2 || s.rows() != s.cols()) {
    throw ShapeError("inverse_sqrt_psd: expected a square matrix, got " + shape_string(s.shape()));
  }
  if (!(eps > 0.0)) throw InvalidArgument("inverse_sqrt_psd: ridge eps must be > 0");
  if (!s.all_finite()) throw NumericalError("inverse_sqrt_psd: input contains non-finite values");
  const double skew = asymmetry(s);
  if (skew > 1e-8) {
    throw InvalidArgument("inverse_sqrt_psd: symmetry violation, max |S_ij - S_ji| = " +
                          std::to_string(skew));
  }
  const std::size_t n = s.rows();
  const EigenDecomposition eig = symmetric_eigen(s);
  std::vector<double> scale(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double shifted = eig.values[i] + eps;
    if (!(shifted > 0.0)) {
      std::ostringstream os;
      os << "inverse_sqrt_psd: eigenvalue " << eig.values[i] << " + eps " << eps
         << " is not positive; input is not positive semidefinite";
      throw NumericalError(os.str());
    }
    scale[i] = 1.0 / std::sqrt(shifted);
  }
  Tensor m({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += eig.vectors(i, k) * scale[k] * eig.vectors(j, k);
      m(i, j) = acc;
      m(j, i) = acc;
    }
  }
  return m;
}

}  // namespace semirnet
