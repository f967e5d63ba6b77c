#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <sstream>
#include <vector>

#include "semirnet/autodiff.hpp"
#include "semirnet/error.hpp"

namespace semirnet {

/// A scalar function of several tensors, expressed on a tape.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

namespace detail {

inline double evaluate_at(const TapeFunction& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& x : inputs) vars.push_back(tape.constant(x));
  const double v = f(tape, vars).item();
  if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite function value at probe");
  return v;
}

}  // namespace detail

/// Compares reverse-mode gradients of f against central differences
/// (f(x+h) - f(x-h)) / 2h on every coordinate of every input. The relative
/// error is |a - n| / max(|a|, |n|, floor); the floor keeps gradients that
/// are smaller than the difference quotient's round-off from dominating.
inline GradCheckReport grad_check(const TapeFunction& f, std::vector<Tensor> inputs, double h,
                                  double floor = 1e-8) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw InvalidArgument("grad_check: step h must lie in [1e-7, 1e-3]");
  if (!(floor > 0.0)) throw InvalidArgument("grad_check: floor must be > 0");

  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& x : inputs) vars.push_back(tape.variable(x));
  Var out = f(tape, vars);
  if (!std::isfinite(out.item())) throw NumericalError("grad_check: non-finite function value");
  tape.backward(out);

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double plus = detail::evaluate_at(f, inputs);
      inputs[k][i] = saved - h;
      const double minus = detail::evaluate_at(f, inputs);
      inputs[k][i] = saved;

      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = rel;
        report.worst_input = k;
        report.worst_index = i;
        report.analytic = analytic[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

/// Single-input convenience form; returns the max relative error.
inline double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  TapeFunction wrapped = [&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); };
  return grad_check(wrapped, std::vector<Tensor>{x}, h).max_relative_error;
}

}  // namespace semirnet
