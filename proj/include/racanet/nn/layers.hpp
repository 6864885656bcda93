#pragma once

#include <map>
#include <string>
#include <utility>

#include "racanet/autodiff/ops.hpp"
#include "racanet/core/rng.hpp"

namespace racanet {

// Ordered name -> parameter map; iteration order fixes checkpoint layout and
// optimizer update order.
using ParamMap = std::map<std::string, ad::Var>;

namespace nn {

inline int norm_groups_for(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0 && channels >= g) return g;
  return 1;
}

// Fan-in scaled normal init for conv weights.
inline ad::Var init_conv_weight(int out_c, int in_c, int k, Rng& rng) {
  Tensor w(Shape{out_c, in_c, k, k});
  double std = 1.0 / std::sqrt(static_cast<double>(in_c * k * k));
  for (int i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
  return ad::leaf(std::move(w), true);
}

struct Conv2d {
  ad::Var w, b;  // b null when bias-free
  int stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int stride_, int pad_, bool bias, Rng& rng,
         double bias_init = 0.0)
      : stride(stride_), pad(pad_) {
    w = init_conv_weight(out_c, in_c, k, rng);
    if (bias) b = ad::leaf(Tensor(Shape{out_c}, bias_init), true);
  }

  ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad); }

  void collect(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".w"] = w;
    if (b) out[prefix + ".b"] = b;
  }
};

struct GroupNorm {
  ad::Var gamma, beta;
  int groups = 1;
  double eps = 1e-5;

  GroupNorm() = default;
  explicit GroupNorm(int channels)
      : gamma(ad::leaf(Tensor(Shape{channels}, 1.0), true)),
        beta(ad::leaf(Tensor(Shape{channels}, 0.0), true)),
        groups(norm_groups_for(channels)) {}

  ad::Var forward(const ad::Var& x) const { return ad::group_norm(x, gamma, beta, groups, eps); }

  void collect(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".gamma"] = gamma;
    out[prefix + ".beta"] = beta;
  }
};

// conv -> group norm -> GELU
struct ConvBlock {
  Conv2d conv;
  GroupNorm norm;

  ConvBlock() = default;
  ConvBlock(int in_c, int out_c, int stride, Rng& rng)
      : conv(in_c, out_c, 3, stride, 1, true, rng), norm(out_c) {}

  ad::Var forward(const ad::Var& x) const { return ad::gelu(norm.forward(conv.forward(x))); }

  void collect(const std::string& prefix, ParamMap& out) const {
    conv.collect(prefix + ".conv", out);
    norm.collect(prefix + ".norm", out);
  }
};

// Two 3x3 convs with a GELU in between, sigmoid output. The shared shape of
// the prior and reliability branches; the final bias starts at -2 so the
// sigmoid output begins near 0.12.
struct SigmoidBranch {
  Conv2d c1, c2;

  SigmoidBranch() = default;
  SigmoidBranch(int in_c, int hidden_c, Rng& rng)
      : c1(in_c, hidden_c, 3, 1, 1, true, rng), c2(hidden_c, 1, 3, 1, 1, true, rng, -2.0) {}

  ad::Var forward(const ad::Var& x) const {
    return ad::sigmoid(c2.forward(ad::gelu(c1.forward(x))));
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
  }
};

}  // namespace nn
}  // namespace racanet
