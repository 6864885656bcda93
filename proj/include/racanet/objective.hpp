#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "racanet/autodiff/ops.hpp"
#include "racanet/data/scene.hpp"
#include "racanet/nn/layers.hpp"

namespace racanet {

// Cross-modal discrepancy map: single 3x3 conv over |Q_r - Q_t|, sigmoid.
inline ad::Var discrepancy(const nn::Conv2d& branch, const ad::Var& qr, const ad::Var& qt) {
  require_same_shape(qr->value, qt->value, "discrepancy");
  return ad::sigmoid(branch.forward(ad::abs_(ad::sub(qr, qt))));
}

// Mean of (1 - D) * |R_r - R_t|; strong where the modalities agree, relaxed
// where they differ.
inline ad::Var cons_loss(const ad::Var& rr, const ad::Var& rt, const ad::Var& d) {
  require_same_shape(rr->value, rt->value, "cons_loss");
  require_same_shape(rr->value, d->value, "cons_loss");
  ad::Var relax = ad::add_scalar(ad::neg(d), 1.0);
  return ad::mean(ad::mul(relax, ad::abs_(ad::sub(rr, rt))));
}

// Per-point posterior responsibilities: p_i[j] = g(x_j; z_i, sigma) /
// sum_k g(x_j; z_k, sigma). The responsibilities sum to 1 over points at
// every pixel; each point's expected count is the responsibility-weighted
// density sum.
struct PointPosteriors {
  std::shared_ptr<Tensor> weights;  // {N, H*W}
  int n = 0;
  int height = 0, width = 0;
};

inline PointPosteriors point_posteriors(const std::vector<PointAnnotation>& points, int H, int W,
                                        double sigma) {
  if (sigma <= 0) throw ConfigError("config", "posterior sigma must be positive");
  PointPosteriors out;
  out.n = static_cast<int>(points.size());
  out.height = H;
  out.width = W;
  if (out.n == 0) return out;
  out.weights = std::make_shared<Tensor>(Shape{out.n, H * W});
  double inv2s2 = 0.5 / (sigma * sigma);
  std::vector<double> g(static_cast<size_t>(out.n));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      // Stabilized by the nearest point; the shared factor cancels.
      double best = 1e300;
      for (int i = 0; i < out.n; ++i) {
        double dx = x - points[static_cast<size_t>(i)].x;
        double dy = y - points[static_cast<size_t>(i)].y;
        double q = (dx * dx + dy * dy) * inv2s2;
        g[static_cast<size_t>(i)] = q;
        best = std::min(best, q);
      }
      double z = 0.0;
      for (int i = 0; i < out.n; ++i) {
        double v = std::exp(best - g[static_cast<size_t>(i)]);
        g[static_cast<size_t>(i)] = v;
        z += v;
      }
      for (int i = 0; i < out.n; ++i)
        out.weights->at(i, y * W + x) = g[static_cast<size_t>(i)] / z;
    }
  return out;
}

// Bayesian counting loss: mean_i |1 - c_i| with c_i the posterior-weighted
// density sum. With no annotated points any predicted mass is penalized.
inline ad::Var count_loss(const ad::Var& density, const PointPosteriors& post) {
  if (post.n == 0) return ad::sum(density);
  if (density->value.size() != post.height * post.width)
    throw ShapeError("count_loss: density size mismatch");
  ad::Var counts = ad::matvec_const(post.weights, density);
  return ad::mean(ad::abs_(ad::add_scalar(ad::neg(counts), 1.0)));
}

// Plain-tensor expected counts (diagnostics/tests).
inline std::vector<double> expected_counts(const Tensor& density, const PointPosteriors& post) {
  std::vector<double> c(static_cast<size_t>(post.n), 0.0);
  for (int i = 0; i < post.n; ++i)
    for (int jj = 0; jj < density.size(); ++jj) c[static_cast<size_t>(i)] += post.weights->at(i, jj) * density[jj];
  return c;
}

// ---- Metrics ----------------------------------------------------------------

namespace detail {
// Cell boundaries by floor division; remainder pixels go to the last cell.
inline int game_cell(double coord, int extent, int cells) {
  int base = extent / cells;
  int c = base > 0 ? static_cast<int>(coord / base) : 0;
  return std::min(c, cells - 1);
}
}  // namespace detail

// Grid Average Mean Error contribution of one image: sum over the 2^L x 2^L
// grid of |predicted cell mass - ground-truth cell count|.
inline double game(const Tensor& pred_density, const std::vector<PointAnnotation>& gt_points,
                   int L) {
  if (L < 0) throw ConfigError("negative-L", "GAME level must be >= 0");
  if (pred_density.ndim() != 2) throw ShapeError("game: density must be {H,W}");
  int H = pred_density.dim(0), W = pred_density.dim(1);
  int cells = 1 << L;
  std::vector<double> pred(static_cast<size_t>(cells) * cells, 0.0);
  std::vector<double> gt(static_cast<size_t>(cells) * cells, 0.0);
  for (int y = 0; y < H; ++y) {
    int cy = detail::game_cell(y, H, cells);
    for (int x = 0; x < W; ++x) {
      int cx = detail::game_cell(x, W, cells);
      pred[static_cast<size_t>(cy) * cells + cx] += pred_density.at(y, x);
    }
  }
  for (const auto& p : gt_points) {
    int cy = detail::game_cell(p.y, H, cells);
    int cx = detail::game_cell(p.x, W, cells);
    gt[static_cast<size_t>(cy) * cells + cx] += 1.0;
  }
  double err = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) err += std::abs(pred[i] - gt[i]);
  return err;
}

inline double rmse(const std::vector<double>& pred_counts, const std::vector<double>& gt_counts) {
  if (pred_counts.size() != gt_counts.size()) throw ShapeError("rmse: length mismatch");
  if (pred_counts.empty()) throw DataError("empty-dataset", "rmse over empty batch");
  double acc = 0.0;
  for (size_t i = 0; i < pred_counts.size(); ++i) {
    double d = pred_counts[i] - gt_counts[i];
    acc += d * d;
  }
  return std::sqrt(acc / pred_counts.size());
}

struct MetricSummary {
  std::array<double, 4> game{0, 0, 0, 0};
  double rmse = 0.0;
};

}  // namespace racanet
