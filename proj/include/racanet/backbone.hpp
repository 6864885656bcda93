#pragma once

#include <array>
#include <utility>

#include "racanet/nn/layers.hpp"

namespace racanet {

// Four-stage pyramid at strides 4/8/16/32. Each stage is two conv blocks;
// only stage 0 strides twice (the stride-4 stem).
struct Backbone {
  struct Stage {
    nn::ConvBlock b1, b2;
  };
  std::array<Stage, 4> stages;

  Backbone() = default;
  Backbone(int in_channels, const std::array<int, 4>& channels, Rng& rng) {
    int prev = in_channels;
    for (int l = 0; l < 4; ++l) {
      int c = channels[static_cast<size_t>(l)];
      stages[static_cast<size_t>(l)].b1 = nn::ConvBlock(prev, c, 2, rng);
      stages[static_cast<size_t>(l)].b2 = nn::ConvBlock(c, c, l == 0 ? 2 : 1, rng);
      prev = c;
    }
  }

  std::array<ad::Var, 4> forward(const ad::Var& img) const {
    const Tensor& v = img->value;
    if (v.ndim() != 3 || v.dim(1) % 32 != 0 || v.dim(2) % 32 != 0)
      throw ShapeError("shape-violation",
                       "backbone input must be {C,H,W} with H,W multiples of 32, got " +
                           shape_str(v.shape()));
    std::array<ad::Var, 4> out;
    ad::Var x = img;
    for (int l = 0; l < 4; ++l) {
      x = stages[static_cast<size_t>(l)].b2.forward(stages[static_cast<size_t>(l)].b1.forward(x));
      out[static_cast<size_t>(l)] = x;
    }
    return out;
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    for (int l = 0; l < 4; ++l) {
      stages[static_cast<size_t>(l)].b1.collect(prefix + ".stage" + std::to_string(l) + ".b1", out);
      stages[static_cast<size_t>(l)].b2.collect(prefix + ".stage" + std::to_string(l) + ".b2", out);
    }
  }
};

// Per-stage 1x1 projections into the low-dimensional matching space. Bias-free
// so the map is linear, not affine.
struct Projections {
  std::array<nn::Conv2d, 4> rgb, thermal;

  Projections() = default;
  Projections(const std::array<int, 4>& channels, const std::array<int, 4>& dims, Rng& rng) {
    for (int l = 0; l < 4; ++l) {
      rgb[static_cast<size_t>(l)] =
          nn::Conv2d(channels[static_cast<size_t>(l)], dims[static_cast<size_t>(l)], 1, 1, 0, false, rng);
      thermal[static_cast<size_t>(l)] =
          nn::Conv2d(channels[static_cast<size_t>(l)], dims[static_cast<size_t>(l)], 1, 1, 0, false, rng);
    }
  }

  std::pair<ad::Var, ad::Var> project(int l, const ad::Var& fr, const ad::Var& ft) const {
    return {rgb[static_cast<size_t>(l)].forward(fr), thermal[static_cast<size_t>(l)].forward(ft)};
  }

  void collect(ParamMap& out) const {
    for (int l = 0; l < 4; ++l) {
      rgb[static_cast<size_t>(l)].collect("proj_r." + std::to_string(l), out);
      thermal[static_cast<size_t>(l)].collect("proj_t." + std::to_string(l), out);
    }
  }
};

}  // namespace racanet
