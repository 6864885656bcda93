#pragma once

// Central finite-difference gradient checking against the autodiff tape.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "racanet/autodiff/tape.hpp"
#include "racanet/core/rng.hpp"

namespace refs {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
  int checked = 0;
};

// `loss` rebuilds the graph and returns the scalar loss node. Analytic
// gradients are recomputed internally; per variable, up to `max_per_var`
// randomly sampled entries are verified by central differences.
inline GradCheckResult check_gradients(
    const std::function<racanet::ad::Var()>& loss,
    const std::vector<std::pair<std::string, racanet::ad::Var>>& vars, racanet::Rng& rng,
    int max_per_var = 6, double h = 1e-5) {
  using racanet::ad::backward;
  GradCheckResult res;

  for (auto& [name, v] : vars) v->clear_grad();
  racanet::ad::Var root = loss();
  backward(root);

  for (const auto& [name, v] : vars) {
    int n = v->value.size();
    for (int k = 0; k < std::min(n, max_per_var); ++k) {
      int idx = n <= max_per_var ? k : rng.randint(0, n - 1);
      double saved = v->value[idx];
      double step = h * std::max(1.0, std::abs(saved));
      v->value[idx] = saved + step;
      double up = loss()->value[0];
      v->value[idx] = saved - step;
      double down = loss()->value[0];
      v->value[idx] = saved;
      double fd = (up - down) / (2.0 * step);
      double an = v->grad_touched ? v->grad[idx] : 0.0;
      ++res.checked;
      if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-7});
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = name + "[" + std::to_string(idx) + "] fd=" + std::to_string(fd) +
                    " an=" + std::to_string(an);
      }
    }
  }
  return res;
}

}  // namespace refs
