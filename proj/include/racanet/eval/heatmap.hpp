#pragma once

#include <array>
#include <cmath>
#include <string>

#include "racanet/core/tensor.hpp"
#include "racanet/io/png_io.hpp"

namespace racanet {

// Fixed 9-anchor viridis-style colormap, linearly interpolated. Heatmap PNGs
// are for human inspection; the raw arrays are saved alongside for bit-exact
// comparison.
inline std::array<double, 3> colormap(double t) {
  static const double anchors[9][3] = {
      {0.267, 0.005, 0.329}, {0.275, 0.195, 0.496}, {0.212, 0.360, 0.552},
      {0.153, 0.497, 0.558}, {0.122, 0.633, 0.530}, {0.289, 0.758, 0.428},
      {0.627, 0.855, 0.223}, {0.876, 0.891, 0.096}, {0.993, 0.906, 0.144}};
  t = std::min(1.0, std::max(0.0, t));
  double pos = t * 8.0;
  int i = std::min(7, static_cast<int>(pos));
  double f = pos - i;
  return {anchors[i][0] * (1 - f) + anchors[i + 1][0] * f,
          anchors[i][1] * (1 - f) + anchors[i + 1][1] * f,
          anchors[i][2] * (1 - f) + anchors[i + 1][2] * f};
}

inline Tensor channel_mean(const Tensor& x) {
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out(Shape{H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out.at(y, xx) += x.at(c, y, xx) / C;
  return out;
}

// Min-max normalized colormap rendering of a single-channel map.
inline void write_heatmap_png(const std::string& path, const Tensor& map) {
  const Tensor* m = &map;
  Tensor flat;
  if (map.ndim() == 3 && map.dim(0) == 1) {
    flat = Tensor(Shape{map.dim(1), map.dim(2)});
    std::copy(map.data(), map.data() + map.size(), flat.data());
    m = &flat;
  }
  if (m->ndim() != 2) throw ShapeError("write_heatmap_png: expected single-channel map");
  int H = m->dim(0), W = m->dim(1);
  double lo = m->min(), hi = m->max();
  double span = hi - lo;
  Tensor img(Shape{3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double t = span > 0 ? (m->at(y, x) - lo) / span : 0.0;
      auto rgb = colormap(t);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[static_cast<size_t>(c)];
    }
  write_png(path, img);
}

}  // namespace racanet
