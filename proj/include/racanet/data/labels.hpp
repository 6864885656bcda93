#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "racanet/data/scene.hpp"

namespace racanet {

inline int stage_stride(int l) { return 4 << l; }  // l in 0..3 -> 4,8,16,32

// Full-resolution density map (one mass-renormalized Gaussian per point) plus
// per-stage crowd-region soft labels in [0,1].
struct SoftLabelSet {
  Tensor density;                // {H,W}, integrates to |points|
  std::array<Tensor, 4> prior;   // {H/4,W/4} .. {H/32,W/32}
};

// Geometry-adaptive sigma per point: beta * mean distance to the knn nearest
// neighbors, clamped; fallback when the sample has too few points.
inline std::vector<double> adaptive_sigmas(const std::vector<PointAnnotation>& pts,
                                           const SigmaPolicy& policy) {
  int n = static_cast<int>(pts.size());
  std::vector<double> sigmas(static_cast<size_t>(n), policy.fallback);
  if (n < policy.knn + 1) return sigmas;
  std::vector<double> d(static_cast<size_t>(n - 1));
  for (int i = 0; i < n; ++i) {
    int k = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double dx = pts[static_cast<size_t>(i)].x - pts[static_cast<size_t>(j)].x;
      double dy = pts[static_cast<size_t>(i)].y - pts[static_cast<size_t>(j)].y;
      d[static_cast<size_t>(k++)] = std::sqrt(dx * dx + dy * dy);
    }
    std::sort(d.begin(), d.end());
    double mean = 0.0;
    for (int k2 = 0; k2 < policy.knn; ++k2) mean += d[static_cast<size_t>(k2)];
    mean /= policy.knn;
    sigmas[static_cast<size_t>(i)] =
        std::min(policy.sigma_max, std::max(policy.sigma_min, policy.beta * mean));
  }
  return sigmas;
}

namespace detail {

// Separable Gaussian smoothing, zero padding, unit-sum 1D kernel.
inline Tensor gaussian_smooth(const Tensor& img, double sigma) {
  int H = img.dim(0), W = img.dim(1);
  int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double ksum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += k[static_cast<size_t>(i + r)];
  }
  for (auto& v : k) v /= ksum;
  Tensor tmp(Shape{H, W}), out(Shape{H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        int xx = x + i;
        if (xx < 0 || xx >= W) continue;
        acc += k[static_cast<size_t>(i + r)] * img.at(y, xx);
      }
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        int yy = y + i;
        if (yy < 0 || yy >= H) continue;
        acc += k[static_cast<size_t>(i + r)] * tmp.at(yy, x);
      }
      out.at(y, x) = acc;
    }
  return out;
}

inline Tensor average_pool(const Tensor& img, int stride) {
  int H = img.dim(0), W = img.dim(1);
  Tensor out(Shape{H / stride, W / stride});
  double inv = 1.0 / (stride * stride);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) out.at(y / stride, x / stride) += img.at(y, x) * inv;
  return out;
}

}  // namespace detail

inline SoftLabelSet make_soft_labels(const SamplePair& pair, const SigmaPolicy& policy,
                                     double smooth_sigma = 3.0) {
  int H = pair.height(), W = pair.width();
  SoftLabelSet out;
  out.density = Tensor(Shape{H, W});
  auto sigmas = adaptive_sigmas(pair.points, policy);

  // Density: per-point truncated Gaussian, renormalized so each point
  // contributes exactly unit mass inside the image.
  for (size_t i = 0; i < pair.points.size(); ++i) {
    const auto& p = pair.points[i];
    double sig = sigmas[i];
    int r = static_cast<int>(std::ceil(4.0 * sig));
    int x0 = std::max(0, static_cast<int>(std::floor(p.x)) - r);
    int x1 = std::min(W - 1, static_cast<int>(std::ceil(p.x)) + r);
    int y0 = std::max(0, static_cast<int>(std::floor(p.y)) - r);
    int y1 = std::min(H - 1, static_cast<int>(std::ceil(p.y)) + r);
    double mass = 0.0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double dx = x - p.x, dy = y - p.y;
        mass += std::exp(-0.5 * (dx * dx + dy * dy) / (sig * sig));
      }
    if (mass <= 0.0) continue;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double dx = x - p.x, dy = y - p.y;
        out.density.at(y, x) += std::exp(-0.5 * (dx * dx + dy * dy) / (sig * sig)) / mass;
      }
  }

  // Crowd-region soft labels: one-sigma disks around the points, smoothed,
  // clamped to [0,1], average-pooled to each stage resolution.
  Tensor mask(Shape{H, W});
  for (size_t i = 0; i < pair.points.size(); ++i) {
    const auto& p = pair.points[i];
    double sig = sigmas[i];
    int r = static_cast<int>(std::ceil(sig));
    int x0 = std::max(0, static_cast<int>(std::floor(p.x)) - r);
    int x1 = std::min(W - 1, static_cast<int>(std::ceil(p.x)) + r);
    int y0 = std::max(0, static_cast<int>(std::floor(p.y)) - r);
    int y1 = std::min(H - 1, static_cast<int>(std::ceil(p.y)) + r);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double dx = x - p.x, dy = y - p.y;
        if (dx * dx + dy * dy <= sig * sig) mask.at(y, x) = 1.0;
      }
  }
  Tensor smooth = pair.points.empty() ? mask : detail::gaussian_smooth(mask, smooth_sigma);
  for (int i = 0; i < smooth.size(); ++i) smooth[i] = std::min(1.0, std::max(0.0, smooth[i]));
  for (int l = 0; l < 4; ++l) out.prior[static_cast<size_t>(l)] = detail::average_pool(smooth, stage_stride(l));
  return out;
}

}  // namespace racanet
