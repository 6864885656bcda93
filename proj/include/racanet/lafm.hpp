#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "racanet/autodiff/ops.hpp"
#include "racanet/nn/layers.hpp"

namespace racanet {

// Modality reliability maps; each branch sees only its own modality plus the
// shared crowd prior.
inline std::pair<ad::Var, ad::Var> reliability(const nn::SigmoidBranch& branch_r,
                                               const nn::SigmoidBranch& branch_t,
                                               const ad::Var& qr, const ad::Var& qt,
                                               const ad::Var& p) {
  require_same_shape(qr->value, qt->value, "reliability");
  if (p->value.dim(1) != qr->value.dim(1) || p->value.dim(2) != qr->value.dim(2))
    throw ShapeError("reliability: prior spatial mismatch");
  return {branch_r.forward(ad::concat_ch({qr, p})), branch_t.forward(ad::concat_ch({qt, p}))};
}

// Reliability-weighted fusion; the upsample term (already adapted to this
// stage's width) is absent at the coarsest stage.
inline ad::Var joint_feature(const ad::Var& qr, const ad::Var& qt, const ad::Var& rr,
                             const ad::Var& rt, const ad::Var& upsampled /*may be null*/) {
  ad::Var j = ad::add(ad::mul_map(rr, qr), ad::mul_map(rt, qt));
  if (upsampled) {
    require_same_shape(j->value, upsampled->value, "joint_feature upsample term");
    j = ad::add(j, upsampled);
  }
  return j;
}

namespace ad_local {

inline int anchor_cells(int n, int ka) { return (n + ka - 1) / ka; }

// Weighted average of J over non-overlapping ka x ka windows (zero padding at
// the boundary contributes nothing to either sum).
inline ad::Var window_weighted_avg(const ad::Var& j, const ad::Var& w, int ka, double eps = 1e-6) {
  const Tensor& jv = j->value;
  const Tensor& wv = w->value;
  int d = jv.dim(0), H = jv.dim(1), W = jv.dim(2);
  if (wv.ndim() != 3 || wv.dim(0) != 1 || wv.dim(1) != H || wv.dim(2) != W)
    throw ShapeError("window_weighted_avg: weight shape");
  int My = anchor_cells(H, ka), Mx = anchor_cells(W, ka);

  auto denom = std::make_shared<Tensor>(Shape{My, Mx});
  Tensor out(Shape{d, My, Mx});
  for (int my = 0; my < My; ++my)
    for (int mx = 0; mx < Mx; ++mx) {
      double wsum = 0.0;
      for (int y = my * ka; y < std::min(H, (my + 1) * ka); ++y)
        for (int x = mx * ka; x < std::min(W, (mx + 1) * ka); ++x) wsum += wv.at(0, y, x);
      double dn = wsum + eps;
      denom->at(my, mx) = dn;
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int y = my * ka; y < std::min(H, (my + 1) * ka); ++y)
          for (int x = mx * ka; x < std::min(W, (mx + 1) * ka); ++x)
            acc += wv.at(0, y, x) * jv.at(c, y, x);
        out.at(c, my, mx) = acc / dn;
      }
    }

  return ad::make_op(std::move(out), {j, w}, [j, w, ka, d, H, W, My, Mx, denom](ad::Node& self) {
    for (int my = 0; my < My; ++my)
      for (int mx = 0; mx < Mx; ++mx) {
        double dn = denom->at(my, mx);
        for (int y = my * ka; y < std::min(H, (my + 1) * ka); ++y)
          for (int x = mx * ka; x < std::min(W, (mx + 1) * ka); ++x) {
            double wi = w->value.at(0, y, x);
            if (j->requires_grad) {
              Tensor& gj = j->ensure_grad();
              for (int c = 0; c < d; ++c) gj.at(c, y, x) += self.grad.at(c, my, mx) * wi / dn;
            }
            if (w->requires_grad) {
              double acc = 0.0;
              for (int c = 0; c < d; ++c)
                acc += self.grad.at(c, my, mx) *
                       (j->value.at(c, y, x) - self.value.at(c, my, mx)) / dn;
              w->ensure_grad().at(0, y, x) += acc;
            }
          }
      }
  });
}

// Mean of P over each window, dividing by the true (unpadded) pixel count so
// boundary anchors are not deflated by padding.
inline ad::Var window_mean_valid(const ad::Var& p, int ka) {
  const Tensor& pv = p->value;
  int H = pv.dim(1), W = pv.dim(2);
  int My = anchor_cells(H, ka), Mx = anchor_cells(W, ka);
  Tensor out(Shape{1, My, Mx});
  for (int my = 0; my < My; ++my)
    for (int mx = 0; mx < Mx; ++mx) {
      int y1 = std::min(H, (my + 1) * ka), x1 = std::min(W, (mx + 1) * ka);
      int n = (y1 - my * ka) * (x1 - mx * ka);
      double acc = 0.0;
      for (int y = my * ka; y < y1; ++y)
        for (int x = mx * ka; x < x1; ++x) acc += pv.at(0, y, x);
      out.at(0, my, mx) = acc / n;
    }
  return ad::make_op(std::move(out), {p}, [p, ka, H, W, My, Mx](ad::Node& self) {
    Tensor& gp = p->ensure_grad();
    for (int my = 0; my < My; ++my)
      for (int mx = 0; mx < Mx; ++mx) {
        int y1 = std::min(H, (my + 1) * ka), x1 = std::min(W, (mx + 1) * ka);
        int n = (y1 - my * ka) * (x1 - mx * ka);
        double g = self.grad.at(0, my, mx) / n;
        for (int y = my * ka; y < y1; ++y)
          for (int x = mx * ka; x < x1; ++x) gp.at(0, y, x) += g;
      }
  });
}

}  // namespace ad_local

// Sparse local anchors over non-overlapping ka x ka windows.
struct AnchorGrid {
  ad::Var s;  // {d, My, Mx} semantic prototypes
  ad::Var p;  // {1, My, Mx} prior scores
  int ka = 3;
  int height = 0, width = 0;  // unpadded map size the grid was built from
  int my() const { return s->value.dim(1); }
  int mx() const { return s->value.dim(2); }
};

inline AnchorGrid sparsify(const ad::Var& j, const ad::Var& p, const ad::Var& rr,
                           const ad::Var& rt, int ka, double eps = 1e-6) {
  if (ka < 1 || ka % 2 == 0) throw ConfigError("config", "ka must be odd and >= 1");
  ad::Var w = ad::mul(p, ad::scale(ad::add(rr, rt), 0.5));
  AnchorGrid grid;
  grid.s = ad_local::window_weighted_avg(j, w, ka, eps);
  grid.p = ad_local::window_mean_valid(p, ka);
  grid.ka = ka;
  grid.height = j->value.dim(1);
  grid.width = j->value.dim(2);
  return grid;
}

// Plain-tensor redistribution forward with full intermediates; shared by the
// autodiff op and by property tests that need the weights.
struct RedistributionDetail {
  Tensor f;        // {d,H,W}
  Tensor alpha;    // {kn*kn,H,W}; zero in clipped candidate slots
  std::vector<int> cand;  // anchor linear index per (slot,pixel); -1 when clipped
  int64_t interactions = 0;
};

inline RedistributionDetail redistribute_forward(const Tensor& j, const Tensor& s, const Tensor& p,
                                                 int ka, int kn, double eps = 1e-6) {
  int d = j.dim(0), H = j.dim(1), W = j.dim(2);
  int My = s.dim(1), Mx = s.dim(2);
  int half = (kn - 1) / 2;
  int S = kn * kn;
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  RedistributionDetail out;
  out.f = Tensor(Shape{d, H, W});
  out.alpha = Tensor(Shape{S, H, W});
  out.cand.assign(static_cast<size_t>(S) * H * W, -1);
  std::vector<double> logits(static_cast<size_t>(S));

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int cy = y / ka, cx = x / ka;
      double mx_logit = -1e300;
      int n_cand = 0;
      for (int a = -half; a <= half; ++a)
        for (int b = -half; b <= half; ++b) {
          int slot = (a + half) * kn + (b + half);
          int my = cy + a, mxx = cx + b;
          if (my < 0 || my >= My || mxx < 0 || mxx >= Mx) continue;
          int m = my * Mx + mxx;
          out.cand[(static_cast<size_t>(slot) * H + y) * W + x] = m;
          double dot = 0.0;
          for (int c = 0; c < d; ++c) dot += j.at(c, y, x) * s.at(c, my, mxx);
          double l = dot * inv_sqrt_d + std::log(p.at(0, my, mxx) + eps);
          logits[static_cast<size_t>(slot)] = l;
          mx_logit = std::max(mx_logit, l);
          ++n_cand;
          ++out.interactions;
        }
      (void)n_cand;
      double z = 0.0;
      for (int slot = 0; slot < S; ++slot) {
        if (out.cand[(static_cast<size_t>(slot) * H + y) * W + x] < 0) continue;
        double v = std::exp(logits[static_cast<size_t>(slot)] - mx_logit);
        out.alpha.at(slot, y, x) = v;
        z += v;
      }
      for (int slot = 0; slot < S; ++slot) {
        int m = out.cand[(static_cast<size_t>(slot) * H + y) * W + x];
        if (m < 0) continue;
        double a = out.alpha.at(slot, y, x) / z;
        out.alpha.at(slot, y, x) = a;
        int my = m / Mx, mxx = m % Mx;
        for (int c = 0; c < d; ++c) out.f.at(c, y, x) += a * s.at(c, my, mxx);
      }
    }
  return out;
}

struct RedistributionResult {
  ad::Var f;
  int64_t interactions = 0;
};

// Anchor-guided pixel redistribution: each pixel attends over the kn x kn
// anchor window centered on its own grid cell, clipped at the grid borders.
inline RedistributionResult redistribute(const ad::Var& j, const AnchorGrid& grid, int kn,
                                         double eps = 1e-6) {
  if (kn < 1 || kn % 2 == 0) throw ConfigError("config", "kn must be odd and >= 1");
  auto detail = std::make_shared<RedistributionDetail>(
      redistribute_forward(j->value, grid.s->value, grid.p->value, grid.ka, kn, eps));
  int64_t interactions = detail->interactions;

  int d = j->value.dim(0), H = j->value.dim(1), W = j->value.dim(2);
  int Mx = grid.s->value.dim(2);
  int S = kn * kn;
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  ad::Var s = grid.s;
  ad::Var p = grid.p;

  Tensor fout = detail->f;
  ad::Var node = ad::make_op(std::move(fout), {j, s, p},
                             [j, s, p, detail, d, H, W, Mx, S, inv_sqrt_d, eps](ad::Node& self) {
    std::vector<double> dlogit(static_cast<size_t>(S));
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        // d f / d alpha, then softmax backward to the logits.
        double dot_sum = 0.0;
        for (int slot = 0; slot < S; ++slot) {
          int m = detail->cand[(static_cast<size_t>(slot) * H + y) * W + x];
          if (m < 0) {
            dlogit[static_cast<size_t>(slot)] = 0.0;
            continue;
          }
          int my = m / Mx, mxx = m % Mx;
          double da = 0.0;
          for (int c = 0; c < d; ++c) da += self.grad.at(c, y, x) * s->value.at(c, my, mxx);
          double a = detail->alpha.at(slot, y, x);
          dlogit[static_cast<size_t>(slot)] = da * a;  // completed below
          dot_sum += da * a;
          if (s->requires_grad) {
            Tensor& gs = s->ensure_grad();
            for (int c = 0; c < d; ++c) gs.at(c, my, mxx) += a * self.grad.at(c, y, x);
          }
        }
        for (int slot = 0; slot < S; ++slot) {
          int m = detail->cand[(static_cast<size_t>(slot) * H + y) * W + x];
          if (m < 0) continue;
          double a = detail->alpha.at(slot, y, x);
          double dl = dlogit[static_cast<size_t>(slot)] - a * dot_sum;
          if (dl == 0.0) continue;
          int my = m / Mx, mxx = m % Mx;
          if (j->requires_grad) {
            Tensor& gj = j->ensure_grad();
            for (int c = 0; c < d; ++c) gj.at(c, y, x) += dl * s->value.at(c, my, mxx) * inv_sqrt_d;
          }
          if (s->requires_grad) {
            Tensor& gs = s->ensure_grad();
            for (int c = 0; c < d; ++c) gs.at(c, my, mxx) += dl * j->value.at(c, y, x) * inv_sqrt_d;
          }
          if (p->requires_grad)
            p->ensure_grad().at(0, my, mxx) += dl / (p->value.at(0, my, mxx) + eps);
        }
      }
  });
  return {node, interactions};
}

}  // namespace racanet
