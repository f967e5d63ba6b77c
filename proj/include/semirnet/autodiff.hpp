#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semirnet/error.hpp"
#include "semirnet/tensor.hpp"

namespace semirnet {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  double item() const { return value().item(); }
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in execution order and the
/// backward pass walks them in exact reverse. One tape per thread.
class Tape {
 public:
  /// Receives the node's accumulated output adjoint and pushes
  /// contributions into the parents' adjoints.
  using Backward = std::function<void(Tape&, const Tensor&)>;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var variable(Tensor value) { return push(std::move(value), true, nullptr); }

  /// Records an op result. The backward closure is dropped when no parent
  /// requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  Var record(Tensor value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
      if (p.tape != this) throw InvalidArgument("autodiff: operands recorded on different tapes");
      needs = needs || nodes_[p.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Adjoint of a node; zeros when nothing flowed into it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
  }

  /// Mutable adjoint buffer, allocated on first use. Only valid for nodes
  /// that require gradients.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void accumulate(Var v, const Tensor& g) {
    if (!nodes_[v.id].requires_grad) return;
    Tensor& buf = grad_buffer(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  void backward(Var root) {
    if (root.tape != this) throw InvalidArgument("backward: root belongs to another tape");
    if (nodes_[root.id].value.size() != 1) {
      throw ShapeError("backward: root must be a scalar, got " +
                       shape_string(nodes_[root.id].value.shape()));
    }
    if (!nodes_[root.id].requires_grad) return;
    grad_buffer(root.id)[0] += 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Smallest nonzero |input| seen by a non-smooth op (relu, abs). A
  /// finite-difference probe larger than this may straddle a kink. Exact
  /// zeros are skipped: they come from dead units upstream and stay put.
  double kink_margin() const noexcept { return kink_margin_; }
  void note_kink_distance(double d) noexcept {
    if (d > 0.0) kink_margin_ = std::min(kink_margin_, d);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable addresses: value() references outlive later pushes
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace ops {

inline Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (!t.requires_grad(b.id)) return;
    Tensor& gb = t.grad_buffer(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double k) {
  Tensor out = a.value();
  for (double& x : out.values()) x *= k;
  return a.tape->record(std::move(out), {a}, [a, k](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  });
}

inline Var add_scalar(Var a, double k) {
  Tensor out = a.value();
  for (double& x : out.values()) x += k;
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

/// Matrix-matrix (m x k)(k x n) or matrix-vector (m x k)(k) product.
inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || (bv.rank() != 1 && bv.rank() != 2) || av.cols() != bv.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols();
  const std::size_t n = bv.rank() == 2 ? bv.cols() : 1;
  Tensor out = bv.rank() == 2 ? Tensor({m, n}) : Tensor({m});
  const double* A = av.values().data();
  const double* B = bv.values().data();
  double* C = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
    }
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const double* A = a.value().values().data();
    const double* B = b.value().values().data();
    const double* G = g.values().data();
    if (t.requires_grad(a.id)) {
      double* GA = t.grad_buffer(a.id).values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          GA[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(b.id)) {
      double* GB = t.grad_buffer(b.id).values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
        }
      }
    }
  });
}

/// W x + b for a weight matrix W (out x in), vector x and bias b.
inline Var linear(Var weight, Var bias, Var x) { return add(matmul(weight, x), bias); }

/// Concatenates 1-D vectors.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  std::vector<double> data;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != 1) throw ShapeError("concat: inputs must be vectors");
    data.insert(data.end(), v.values().begin(), v.values().end());
    sizes.push_back(v.size());
  }
  std::vector<Var> captured(parts.begin(), parts.end());
  return parts[0].tape->record(
      Tensor::vector(std::move(data)), parts,
      [captured, sizes](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < captured.size(); ++i) {
          if (t.requires_grad(captured[i].id)) {
            Tensor& gp = t.grad_buffer(captured[i].id);
            for (std::size_t j = 0; j < sizes[i]; ++j) gp[j] += g[offset + j];
          }
          offset += sizes[i];
        }
      });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

/// Contiguous sub-vector [offset, offset + length).
inline Var slice(Var a, std::size_t offset, std::size_t length) {
  const Tensor& av = a.value();
  if (av.rank() != 1 || offset + length > av.size() || length == 0) {
    throw ShapeError("slice: range out of bounds for " + shape_string(av.shape()));
  }
  std::vector<double> data(av.values().begin() + offset, av.values().begin() + offset + length);
  return a.tape->record(Tensor::vector(std::move(data)), {a},
                        [a, offset](Tape& t, const Tensor& g) {
                          Tensor& ga = t.grad_buffer(a.id);
                          for (std::size_t j = 0; j < g.size(); ++j) ga[offset + j] += g[j];
                        });
}

/// Splits a vector into consecutive pieces of the given sizes.
inline std::vector<Var> split(Var a, std::span<const std::size_t> sizes) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (a.value().rank() != 1 || total != a.value().size()) {
    throw ShapeError("split: sizes do not sum to vector length");
  }
  std::vector<Var> out;
  std::size_t offset = 0;
  for (std::size_t s : sizes) {
    out.push_back(slice(a, offset, s));
    offset += s;
  }
  return out;
}

/// Stacks equal-length vectors as the rows of a matrix.
inline Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw InvalidArgument("stack_rows: no inputs");
  const std::size_t d = rows[0].value().size();
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (const Var& r : rows) {
    if (r.value().rank() != 1 || r.value().size() != d) {
      throw ShapeError("stack_rows: rows must be vectors of equal length");
    }
    data.insert(data.end(), r.value().values().begin(), r.value().values().end());
  }
  std::vector<Var> captured(rows.begin(), rows.end());
  return rows[0].tape->record(Tensor::matrix(rows.size(), d, std::move(data)), rows,
                              [captured, d](Tape& t, const Tensor& g) {
                                for (std::size_t i = 0; i < captured.size(); ++i) {
                                  if (!t.requires_grad(captured[i].id)) continue;
                                  Tensor& gr = t.grad_buffer(captured[i].id);
                                  for (std::size_t j = 0; j < d; ++j) gr[j] += g[i * d + j];
                                }
                              });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (double& x : out.values()) {
    a.tape->note_kink_distance(std::abs(x));
    x = x > 0.0 ? x : 0.0;
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g[i];
    }
  });
}

/// Elementwise |x|; subgradient 0 at x = 0.
inline Var abs(Var a) {
  Tensor out = a.value();
  for (double& x : out.values()) {
    a.tape->note_kink_distance(std::abs(x));
    x = std::abs(x);
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g[i];
      else if (av[i] < 0.0) ga[i] -= g[i];
    }
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean of a list of scalars, summed left to right.
inline Var mean_of(std::span<const Var> scalars) {
  if (scalars.empty()) throw InvalidArgument("mean_of: no inputs");
  double s = 0.0;
  for (const Var& v : scalars) s += v.item();
  const double inv = 1.0 / static_cast<double>(scalars.size());
  std::vector<Var> captured(scalars.begin(), scalars.end());
  return scalars[0].tape->record(Tensor::scalar(s * inv), scalars,
                                 [captured, inv](Tape& t, const Tensor& g) {
                                   for (const Var& v : captured) {
                                     if (t.requires_grad(v.id)) t.grad_buffer(v.id)[0] += g[0] * inv;
                                   }
                                 });
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

/// Mean of selected rows of a matrix (embedding lookup + mean pooling).
/// Gradients land only on the selected rows.
inline Var gather_mean(Var table, std::vector<std::size_t> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("gather_mean: table must be a matrix");
  if (ids.empty()) throw InvalidArgument("gather_mean: empty id list");
  const std::size_t d = tv.cols();
  Tensor out({d});
  for (std::size_t id : ids) {
    if (id >= tv.rows()) throw InvalidArgument("gather_mean: id out of range");
    for (std::size_t j = 0; j < d; ++j) out[j] += tv(id, j);
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& x : out.values()) x *= inv;
  return table.tape->record(std::move(out), {table},
                            [table, ids = std::move(ids), inv, d](Tape& t, const Tensor& g) {
                              Tensor& gt = t.grad_buffer(table.id);
                              for (std::size_t id : ids) {
                                for (std::size_t j = 0; j < d; ++j) gt(id, j) += g[j] * inv;
                              }
                            });
}

inline Var norm(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x * x;
  const double n = std::sqrt(s);
  return a.tape->record(Tensor::scalar(n), {a}, [a, n](Tape& t, const Tensor& g) {
    if (n == 0.0) return;  // subgradient 0
    const Tensor& av = a.value();
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[0] * av[i] / n;
  });
}

/// x / |x|. Throws ZeroVectorError on a zero vector.
inline Var l2_normalize(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double x : av.values()) s += x * x;
  const double n = std::sqrt(s);
  if (n == 0.0) throw ZeroVectorError("l2_normalize: zero-norm input");
  Tensor out = av;
  for (double& x : out.values()) x /= n;
  return a.tape->record(std::move(out), {a}, [a, n](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    double proj = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) proj += g[i] * av[i];
    proj /= n * n;
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += (g[i] - av[i] * proj) / n;
  });
}

/// dot(a,b) / (|a||b|). Throws ZeroVectorError on a zero-norm input.
inline Var cosine_similarity(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "cosine_similarity");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    ab += av[i] * bv[i];
    aa += av[i] * av[i];
    bb += bv[i] * bv[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na == 0.0 || nb == 0.0) throw ZeroVectorError("cosine_similarity: zero-norm input");
  const double c = ab / (na * nb);
  return a.tape->record(Tensor::scalar(c), {a, b}, [a, b, na, nb, c](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    // d cos / da = b/(|a||b|) - cos * a/|a|^2
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < av.size(); ++i) {
        ga[i] += g[0] * (bv[i] / (na * nb) - c * av[i] / (na * na));
      }
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < bv.size(); ++i) {
        gb[i] += g[0] * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
      }
    }
  });
}

/// |a - b|, with subgradient 0 when a == b.
inline Var euclidean_distance(Var a, Var b) { return norm(sub(a, b)); }

/// Mean softmax cross-entropy of n x C logits against n x C one-hot targets.
inline Var softmax_cross_entropy(Var logits, Var targets) {
  const Tensor& lv = logits.value();
  const Tensor& yv = targets.value();
  require_same_shape(lv, yv, "softmax_cross_entropy");
  if (lv.rank() != 2) throw ShapeError("softmax_cross_entropy: expected n x C logits");
  const std::size_t n = lv.rows(), c = lv.cols();
  Tensor probs({n, c});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = lv(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lv(i, j) - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(lv(i, j) - log_z);
      total -= yv(i, j) * (lv(i, j) - log_z);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return logits.tape->record(
      Tensor::scalar(total * inv_n), {logits, targets},
      [logits, targets, probs = std::move(probs), inv_n, n, c](Tape& t, const Tensor& g) {
        const Tensor& yv = targets.value();
        if (t.requires_grad(logits.id)) {
          Tensor& gl = t.grad_buffer(logits.id);
          for (std::size_t i = 0; i < n; ++i) {
            double ysum = 0.0;
            for (std::size_t j = 0; j < c; ++j) ysum += yv(i, j);
            for (std::size_t j = 0; j < c; ++j) {
              gl(i, j) += g[0] * inv_n * (ysum * probs(i, j) - yv(i, j));
            }
          }
        }
      });
}

}  // namespace ops
}  // namespace semirnet
