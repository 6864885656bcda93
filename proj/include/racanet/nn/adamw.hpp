#pragma once

#include <cmath>
#include <map>
#include <string>

#include "racanet/nn/layers.hpp"

namespace racanet::nn {

// Adam with decoupled weight decay. Parameters whose gradient was never
// touched in the step are skipped entirely (no moment update, no decay), so
// an unreachable branch stays bitwise unchanged.
class AdamW {
 public:
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  struct Slot {
    Tensor m, v;
    int64_t t = 0;
  };

  AdamW() = default;
  AdamW(double lr_, double wd) : lr(lr_), weight_decay(wd) {}

  void zero_grad(ParamMap& params) {
    for (auto& [name, p] : params) p->clear_grad();
  }

  void step(ParamMap& params) {
    for (auto& [name, p] : params) {
      if (!p->grad_touched) continue;
      Slot& s = slots_[name];
      if (s.m.empty()) {
        s.m = Tensor(p->value.shape());
        s.v = Tensor(p->value.shape());
      }
      ++s.t;
      double bc1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
      double bc2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
      Tensor& val = p->value;
      const Tensor& g = p->grad;
      for (int i = 0; i < val.size(); ++i) {
        s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
        s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g[i] * g[i];
        double mhat = s.m[i] / bc1;
        double vhat = s.v[i] / bc2;
        val[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * val[i]);
      }
    }
  }

  // Gradient L2 norm over a name prefix; 0 when nothing under it was touched.
  static double grad_norm(const ParamMap& params, const std::string& prefix) {
    double acc = 0.0;
    for (const auto& [name, p] : params) {
      if (name.rfind(prefix, 0) != 0) continue;
      if (!p->grad_touched) continue;
      for (int i = 0; i < p->grad.size(); ++i) acc += p->grad[i] * p->grad[i];
    }
    return std::sqrt(acc);
  }

  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::map<std::string, Slot>& slots() { return slots_; }

 private:
  std::map<std::string, Slot> slots_;
};

}  // namespace racanet::nn
