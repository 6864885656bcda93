#pragma once

#include <utility>

#include "racanet/data/labels.hpp"

namespace racanet {

struct AugmentedSample {
  SamplePair pair;
  SoftLabelSet labels;
};

namespace detail {

inline Tensor crop_chw(const Tensor& img, int x0, int y0, int w, int h) {
  int C = img.dim(0);
  Tensor out(Shape{C, h, w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

inline Tensor crop_hw(const Tensor& img, int x0, int y0, int w, int h) {
  Tensor out(Shape{h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}

inline void flip_x_chw(Tensor& img) {
  int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, W - 1 - x));
}

inline void flip_x_hw(Tensor& img) {
  int H = img.dim(0), W = img.dim(1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W / 2; ++x) std::swap(img.at(y, x), img.at(y, W - 1 - x));
}

}  // namespace detail

// Deterministic core: the same window/flip is applied to both modalities, the
// points, the density map, and every stage-resolution label map. Offsets must
// sit on the 32-pixel grid so the stride-32 maps crop exactly.
inline AugmentedSample apply_crop_flip(const SamplePair& pair, const SoftLabelSet& labels,
                                       int x0, int y0, int crop, bool flip) {
  int H = pair.height(), W = pair.width();
  if (crop > std::min(H, W) || crop % 32 != 0)
    throw ConfigError("crop-too-large",
                      "crop " + std::to_string(crop) + " invalid for " + std::to_string(W) + "x" +
                          std::to_string(H));
  if (x0 % 32 != 0 || y0 % 32 != 0 || x0 < 0 || y0 < 0 || x0 + crop > W || y0 + crop > H)
    throw ConfigError("crop-too-large", "crop window out of range or off the 32-pixel grid");

  AugmentedSample out;
  out.pair.rgb = detail::crop_chw(pair.rgb, x0, y0, crop, crop);
  out.pair.thermal = detail::crop_chw(pair.thermal, x0, y0, crop, crop);
  out.pair.meta = pair.meta;
  out.labels.density = detail::crop_hw(labels.density, x0, y0, crop, crop);
  for (int l = 0; l < 4; ++l) {
    int s = stage_stride(l);
    out.labels.prior[static_cast<size_t>(l)] =
        detail::crop_hw(labels.prior[static_cast<size_t>(l)], x0 / s, y0 / s, crop / s, crop / s);
  }
  for (const auto& p : pair.points) {
    double nx = p.x - x0, ny = p.y - y0;
    if (nx >= 0 && nx < crop && ny >= 0 && ny < crop) out.pair.points.push_back({nx, ny});
  }
  if (flip) {
    detail::flip_x_chw(out.pair.rgb);
    detail::flip_x_chw(out.pair.thermal);
    detail::flip_x_hw(out.labels.density);
    for (auto& m : out.labels.prior) detail::flip_x_hw(m);
    for (auto& p : out.pair.points) p.x = std::max(0.0, (crop - 1) - p.x);
  }
  return out;
}

inline AugmentedSample random_crop_flip(const SamplePair& pair, const SoftLabelSet& labels,
                                        int crop, double flip_p, Rng& rng) {
  int H = pair.height(), W = pair.width();
  if (crop > std::min(H, W) || crop % 32 != 0)
    throw ConfigError("crop-too-large",
                      "crop " + std::to_string(crop) + " invalid for " + std::to_string(W) + "x" +
                          std::to_string(H));
  int x0 = rng.randint(0, (W - crop) / 32) * 32;
  int y0 = rng.randint(0, (H - crop) / 32) * 32;
  bool flip = rng.uniform() < flip_p;
  return apply_crop_flip(pair, labels, x0, y0, crop, flip);
}

}  // namespace racanet
