#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "apnet/autodiff.hpp"

namespace apnet::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;  // |a - n| / max(|a|, |n|, 1)
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // stencil straddles a non-differentiable point
  bool passed = false;
};

/// Central-difference check of d(build)/d(target). `build(graph)` must construct a scalar
/// loss that binds `target` with graph.parameter(target). Only the first `max_coords`
/// elements are perturbed.
template <typename Build>
GradCheckReport grad_check_param(Build&& build, DiffTensor<double>& target, double step, double tol,
                                 std::size_t max_coords = std::numeric_limits<std::size_t>::max()) {
  GradCheckReport report;
  target.zero_grad();
  Graph<double> base;
  const Var loss = build(base);
  base.backward(loss);
  target.ensure_grad();
  const std::vector<double> analytic = target.grad;
  const auto base_sig = base.kink_signature();

  auto evaluate = [&](std::vector<std::uint8_t>& sig) {
    Graph<double> g;
    const Var l = build(g);
    sig = g.kink_signature();
    return g.item(l);
  };

  const std::size_t n = std::min(max_coords, target.size());
  std::vector<std::uint8_t> sig_plus, sig_minus;
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = target.values[i];
    target.values[i] = saved + step;
    const double f_plus = evaluate(sig_plus);
    target.values[i] = saved - step;
    const double f_minus = evaluate(sig_minus);
    target.values[i] = saved;
    if (sig_plus != base_sig || sig_minus != base_sig) {
      ++report.skipped;
      continue;
    }
    const double numeric = (f_plus - f_minus) / (2.0 * step);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic[i]), 1.0});
    ++report.checked;
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  target.zero_grad();
  report.passed = report.max_rel_error <= tol;
  return report;
}

/// grad_check for f(graph, x) -> scalar, with x bound as the only parameter.
template <typename F>
GradCheckReport grad_check(F&& f, const DiffTensor<double>& x, double step, double tol) {
  DiffTensor<double> param = x;
  return grad_check_param([&](Graph<double>& g) { return f(g, g.parameter(param, "x")); }, param, step, tol);
}

}  // namespace apnet::ad
