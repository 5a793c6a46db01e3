#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mvke/parameters.hpp"

namespace mvke {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Entries checked per parameter tensor; 0 means all. Sampled at an even
  /// stride so the choice is deterministic.
  std::size_t max_entries_per_tensor = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences for the given parameters. Intended for 64-bit mode.
///
/// Relative error per entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                                  std::vector<Parameter<double>*> params, GradCheckOptions options = {}) {
  for (auto* p : params) p->tensor.zero_grad();
  Tensor<double> loss = loss_fn();
  loss.backward();

  GradCheckResult result;
  for (auto* p : params) {
    const std::size_t n = p->tensor.size();
    std::vector<double> analytic(n, 0.0);
    if (p->tensor.has_grad()) std::copy(p->tensor.grad().begin(), p->tensor.grad().end(), analytic.begin());

    std::vector<std::size_t> picks;
    const std::size_t want = options.max_entries_per_tensor == 0 ? n : std::min(n, options.max_entries_per_tensor);
    for (std::size_t i = 0; i < want; ++i) picks.push_back(i * n / want);

    auto values = p->tensor.mutable_data();
    for (std::size_t idx : picks) {
      const double saved = values[idx];
      double f_plus = 0, f_minus = 0;
      try {
        values[idx] = saved + options.step;
        f_plus = loss_fn().item();
        values[idx] = saved - options.step;
        f_minus = loss_fn().item();
      } catch (const NumericalError& e) {
        values[idx] = saved;
        throw NumericalError("grad_check: " + std::string(e.what()) + " while perturbing " + p->name);
      }
      values[idx] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw NumericalError("grad_check: non-finite loss while perturbing " + p->name);
      const double numeric = (f_plus - f_minus) / (2.0 * options.step);
      const double a = analytic[idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.entries_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_parameter = p->name;
        result.worst_index = idx;
      }
    }
    p->tensor.zero_grad();
  }
  return result;
}

inline std::vector<Parameter<double>*> all_parameters(ParameterStore<double>& store) {
  std::vector<Parameter<double>*> out;
  for (auto& p : store.all()) out.push_back(&p);
  return out;
}

}  // namespace mvke
