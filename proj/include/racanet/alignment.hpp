#pragma once

#include <utility>
#include <vector>

#include "racanet/autodiff/ops.hpp"

namespace racanet {

// Local offset window of radius k_delta; (0,0) is always included and the set
// is symmetric under negation.
struct MatchWindow {
  int k_delta = 1;

  explicit MatchWindow(int k) : k_delta(k) {}
  int count() const { return (2 * k_delta + 1) * (2 * k_delta + 1); }
  // Row-major (dy, dx) from (-k,-k) to (k,k).
  std::pair<int, int> offset(int t) const {
    int n = 2 * k_delta + 1;
    return {t / n - k_delta, t % n - k_delta};
  }
};

namespace ad_local {

// Scaled dot-product scores between source pixels and destination pixels in
// the offset window; out-of-image offsets are left at zero and masked out of
// the softmax downstream.
inline ad::Var local_scores(const ad::Var& q_src, const ad::Var& q_dst, int k_delta) {
  require_same_shape(q_src->value, q_dst->value, "local_scores");
  const Tensor& a = q_src->value;
  int d = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (k_delta >= std::min(H, W))
    throw ShapeError("shape-mismatch", "matching radius " + std::to_string(k_delta) +
                                           " too large for " + std::to_string(H) + "x" +
                                           std::to_string(W));
  MatchWindow win(k_delta);
  int T = win.count();
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor out(Shape{T, H, W});
  for (int t = 0; t < T; ++t) {
    auto [dy, dx] = win.offset(t);
    for (int y = 0; y < H; ++y) {
      int yy = y + dy;
      if (yy < 0 || yy >= H) continue;
      for (int x = 0; x < W; ++x) {
        int xx = x + dx;
        if (xx < 0 || xx >= W) continue;
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += a.at(c, y, x) * q_dst->value.at(c, yy, xx);
        out.at(t, y, x) = acc * inv_sqrt_d;
      }
    }
  }
  return ad::make_op(std::move(out), {q_src, q_dst},
                     [q_src, q_dst, k_delta, d, H, W, T, inv_sqrt_d](ad::Node& self) {
    MatchWindow win(k_delta);
    for (int t = 0; t < T; ++t) {
      auto [dy, dx] = win.offset(t);
      for (int y = 0; y < H; ++y) {
        int yy = y + dy;
        if (yy < 0 || yy >= H) continue;
        for (int x = 0; x < W; ++x) {
          int xx = x + dx;
          if (xx < 0 || xx >= W) continue;
          double g = self.grad.at(t, y, x) * inv_sqrt_d;
          if (g == 0.0) continue;
          if (q_src->requires_grad) {
            Tensor& gs = q_src->ensure_grad();
            for (int c = 0; c < d; ++c) gs.at(c, y, x) += g * q_dst->value.at(c, yy, xx);
          }
          if (q_dst->requires_grad) {
            Tensor& gd = q_dst->ensure_grad();
            for (int c = 0; c < d; ++c) gd.at(c, yy, xx) += g * q_src->value.at(c, y, x);
          }
        }
      }
    }
  });
}

// Per-pixel softmax over the in-bounds subset of the offset window; masked
// entries get weight exactly zero.
inline ad::Var local_softmax(const ad::Var& scores, int k_delta) {
  const Tensor& e = scores->value;
  int T = e.dim(0), H = e.dim(1), W = e.dim(2);
  MatchWindow win(k_delta);
  Tensor out(Shape{T, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double mx = -1e300;
      for (int t = 0; t < T; ++t) {
        auto [dy, dx] = win.offset(t);
        int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
        mx = std::max(mx, e.at(t, y, x));
      }
      double z = 0.0;
      for (int t = 0; t < T; ++t) {
        auto [dy, dx] = win.offset(t);
        int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
        double v = std::exp(e.at(t, y, x) - mx);
        out.at(t, y, x) = v;
        z += v;
      }
      for (int t = 0; t < T; ++t) out.at(t, y, x) /= z;
    }
  return ad::make_op(std::move(out), {scores}, [scores, T, H, W](ad::Node& self) {
    Tensor& ge = scores->ensure_grad();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double dot = 0.0;
        for (int t = 0; t < T; ++t) dot += self.grad.at(t, y, x) * self.value.at(t, y, x);
        for (int t = 0; t < T; ++t) {
          double a = self.value.at(t, y, x);
          if (a == 0.0) continue;
          ge.at(t, y, x) += a * (self.grad.at(t, y, x) - dot);
        }
      }
  });
}

// Weighted aggregation of destination features over the offset window.
inline ad::Var local_aggregate(const ad::Var& alpha, const ad::Var& q_dst, int k_delta) {
  const Tensor& av = alpha->value;
  const Tensor& qv = q_dst->value;
  int T = av.dim(0), H = av.dim(1), W = av.dim(2);
  int d = qv.dim(0);
  MatchWindow win(k_delta);
  Tensor out(Shape{d, H, W});
  for (int t = 0; t < T; ++t) {
    auto [dy, dx] = win.offset(t);
    for (int y = 0; y < H; ++y) {
      int yy = y + dy;
      if (yy < 0 || yy >= H) continue;
      for (int x = 0; x < W; ++x) {
        int xx = x + dx;
        if (xx < 0 || xx >= W) continue;
        double a = av.at(t, y, x);
        if (a == 0.0) continue;
        for (int c = 0; c < d; ++c) out.at(c, y, x) += a * qv.at(c, yy, xx);
      }
    }
  }
  return ad::make_op(std::move(out), {alpha, q_dst},
                     [alpha, q_dst, k_delta, T, H, W, d](ad::Node& self) {
    MatchWindow win(k_delta);
    for (int t = 0; t < T; ++t) {
      auto [dy, dx] = win.offset(t);
      for (int y = 0; y < H; ++y) {
        int yy = y + dy;
        if (yy < 0 || yy >= H) continue;
        for (int x = 0; x < W; ++x) {
          int xx = x + dx;
          if (xx < 0 || xx >= W) continue;
          if (alpha->requires_grad) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c) acc += self.grad.at(c, y, x) * q_dst->value.at(c, yy, xx);
            alpha->ensure_grad().at(t, y, x) += acc;
          }
          if (q_dst->requires_grad) {
            double a = alpha->value.at(t, y, x);
            if (a == 0.0) continue;
            Tensor& gq = q_dst->ensure_grad();
            for (int c = 0; c < d; ++c) gq.at(c, yy, xx) += a * self.grad.at(c, y, x);
          }
        }
      }
    }
  });
}

}  // namespace ad_local

// One matching direction: normalized window weights and the soft-aligned
// destination features.
struct SoftMatchResult {
  ad::Var alpha;    // {(2k+1)^2, H, W}
  ad::Var aligned;  // {d, H, W}
};

inline SoftMatchResult soft_match(const ad::Var& q_src, const ad::Var& q_dst, int k_delta) {
  ad::Var e = ad_local::local_scores(q_src, q_dst, k_delta);
  ad::Var alpha = ad_local::local_softmax(e, k_delta);
  ad::Var aligned = ad_local::local_aggregate(alpha, q_dst, k_delta);
  return {alpha, aligned};
}

// Prior-weighted bidirectional L1 consistency, normalized by the prior mass.
inline ad::Var align_loss(const ad::Var& qr, const ad::Var& qt, const ad::Var& qt_aligned,
                          const ad::Var& qr_aligned, const ad::Var& p, double eps = 1e-6) {
  require_same_shape(qr->value, qt_aligned->value, "align_loss");
  require_same_shape(qt->value, qr_aligned->value, "align_loss");
  if (p->value.dim(1) != qr->value.dim(1) || p->value.dim(2) != qr->value.dim(2))
    throw ShapeError("align_loss: prior spatial mismatch");
  ad::Var l1_rt = ad::sum_channels(ad::abs_(ad::sub(qr, qt_aligned)));
  ad::Var l1_tr = ad::sum_channels(ad::abs_(ad::sub(qt, qr_aligned)));
  ad::Var num = ad::sum(ad::mul(p, ad::add(l1_rt, l1_tr)));
  ad::Var den = ad::add_scalar(ad::sum(p), eps);
  return ad::div(num, den);
}

// Per-pixel argmax offset of a weight volume; used by the shift-recovery
// diagnostics (not differentiable, plain tensors).
inline std::pair<Tensor, Tensor> argmax_offsets(const Tensor& alpha, int k_delta) {
  MatchWindow win(k_delta);
  int T = alpha.dim(0), H = alpha.dim(1), W = alpha.dim(2);
  Tensor best_dx(Shape{H, W}), best_dy(Shape{H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      double bv = -1.0;
      for (int t = 0; t < T; ++t)
        if (alpha.at(t, y, x) > bv) {
          bv = alpha.at(t, y, x);
          best = t;
        }
      auto [dy, dx] = win.offset(best);
      best_dx.at(y, x) = dx;
      best_dy.at(y, x) = dy;
    }
  return {std::move(best_dy), std::move(best_dx)};
}

}  // namespace racanet
