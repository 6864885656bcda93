#pragma once

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "racanet/autodiff/tape.hpp"
#include "racanet/core/tensor.hpp"

// Generic differentiable ops on {C,H,W} / flat tensors. Specialty local-window
// kernels live with their modules (alignment.hpp, lafm.hpp).
namespace racanet::ad {

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int i = 0; i < gb.size(); ++i) gb[i] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * a->value[i];
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "div");
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] /= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int i = 0; i < gb.size(); ++i) {
        double bv = b->value[i];
        gb[i] -= self.grad[i] * a->value[i] / (bv * bv);
      }
    }
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] *= c;
  return make_op(std::move(out), {a}, [a, c](Node& self) {
    Tensor& ga = a->ensure_grad();
    for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * c;
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] += c;
  return make_op(std::move(out), {a}, [a](Node& self) {
    Tensor& ga = a->ensure_grad();
    for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var abs_(const Var& a) {
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
  return make_op(std::move(out), {a}, [a](Node& self) {
    Tensor& ga = a->ensure_grad();
    for (int i = 0; i < ga.size(); ++i) {
      double x = a->value[i];
      ga[i] += self.grad[i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
    }
  });
}

inline Var relu(const Var& a) {
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] = out[i] > 0 ? out[i] : 0.0;
  return make_op(std::move(out), {a}, [a](Node& self) {
    Tensor& ga = a->ensure_grad();
    for (int i = 0; i < ga.size(); ++i)
      if (a->value[i] > 0) ga[i] += self.grad[i];
  });
}

inline double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad_scalar(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

inline Var gelu(const Var& a) {
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] = gelu_scalar(out[i]);
  return make_op(std::move(out), {a}, [a](Node& self) {
    Tensor& ga = a->ensure_grad();
    for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * gelu_grad_scalar(a->value[i]);
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return make_op(std::move(out), {a}, [a](Node& self) {
    Tensor& ga = a->ensure_grad();
    for (int i = 0; i < ga.size(); ++i) {
      double s = self.value[i];
      ga[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

inline Var log_(const Var& a) {
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  return make_op(std::move(out), {a}, [a](Node& self) {
    Tensor& ga = a->ensure_grad();
    for (int i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / a->value[i];
  });
}

// Gradient passes through the interior [lo, hi], zero outside.
inline Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a->value;
  for (int i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
  return make_op(std::move(out), {a}, [a, lo, hi](Node& self) {
    Tensor& ga = a->ensure_grad();
    for (int i = 0; i < ga.size(); ++i) {
      double x = a->value[i];
      if (x >= lo && x <= hi) ga[i] += self.grad[i];
    }
  });
}

inline Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a->value.sum());
  return make_op(std::move(out), {a}, [a](Node& self) {
    Tensor& ga = a->ensure_grad();
    double g = self.grad[0];
    for (int i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

inline Var mean(const Var& a) {
  int n = a->value.size();
  Tensor out = Tensor::scalar(a->value.sum() / n);
  return make_op(std::move(out), {a}, [a, n](Node& self) {
    Tensor& ga = a->ensure_grad();
    double g = self.grad[0] / n;
    for (int i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

// Channel concatenation of {C_i,H,W} maps.
inline Var concat_ch(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_ch: empty input");
  int H = xs[0]->value.dim(1), W = xs[0]->value.dim(2);
  int C = 0;
  for (const auto& x : xs) {
    if (x->value.ndim() != 3 || x->value.dim(1) != H || x->value.dim(2) != W)
      throw ShapeError("concat_ch: spatial mismatch");
    C += x->value.dim(0);
  }
  Tensor out(Shape{C, H, W});
  int plane = H * W;
  int off = 0;
  for (const auto& x : xs) {
    int n = x->value.size();
    std::copy(x->value.data(), x->value.data() + n, out.data() + off);
    off += n;
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return make_op(std::move(out), parents, [xs, plane](Node& self) {
    int off = 0;
    for (const auto& x : xs) {
      int n = x->value.size();
      if (x->requires_grad) {
        Tensor& gx = x->ensure_grad();
        for (int i = 0; i < n; ++i) gx[i] += self.grad[off + i];
      }
      off += n;
    }
    (void)plane;
  });
}

// 2D convolution, zero padding. x {IC,H,W}, w {OC,IC,K,K}, b {OC} or null.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 3 || wv.ndim() != 4) throw ShapeError("conv2d: rank");
  int IC = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  int OC = wv.dim(0), K = wv.dim(2);
  if (wv.dim(1) != IC || wv.dim(3) != K) throw ShapeError("conv2d: weight shape");
  int OH = (H + 2 * pad - K) / stride + 1;
  int OW = (W + 2 * pad - K) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeError("conv2d: output collapsed");

  Tensor out(Shape{OC, OH, OW});
  for (int oc = 0; oc < OC; ++oc) {
    double bias = b ? b->value[oc] : 0.0;
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) out.at(oc, oy, ox) = bias;
    for (int ic = 0; ic < IC; ++ic) {
      for (int ky = 0; ky < K; ++ky) {
        for (int kx = 0; kx < K; ++kx) {
          double wgt = wv.at(oc, ic, ky, kx);
          if (wgt == 0.0) continue;
          for (int oy = 0; oy < OH; ++oy) {
            int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            const double* xr = xv.data() + (static_cast<size_t>(ic) * H + iy) * W;
            double* orow = out.data() + (static_cast<size_t>(oc) * OH + oy) * OW;
            for (int ox = 0; ox < OW; ++ox) {
              int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              orow[ox] += wgt * xr[ix];
            }
          }
        }
      }
    }
  }

  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op(std::move(out), parents, [x, w, b, stride, pad, IC, H, W, OC, K, OH, OW](Node& self) {
    const Tensor& g = self.grad;
    if (b && b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int oc = 0; oc < OC; ++oc) {
        double acc = 0.0;
        const double* gp = g.data() + static_cast<size_t>(oc) * OH * OW;
        for (int i = 0; i < OH * OW; ++i) acc += gp[i];
        gb[oc] += acc;
      }
    }
    if (w->requires_grad) {
      Tensor& gw = w->ensure_grad();
      for (int oc = 0; oc < OC; ++oc)
        for (int ic = 0; ic < IC; ++ic)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              double acc = 0.0;
              for (int oy = 0; oy < OH; ++oy) {
                int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                const double* xr = x->value.data() + (static_cast<size_t>(ic) * H + iy) * W;
                const double* gr = g.data() + (static_cast<size_t>(oc) * OH + oy) * OW;
                for (int ox = 0; ox < OW; ++ox) {
                  int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  acc += gr[ox] * xr[ix];
                }
              }
              gw.at(oc, ic, ky, kx) += acc;
            }
    }
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      for (int oc = 0; oc < OC; ++oc)
        for (int ic = 0; ic < IC; ++ic)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              double wgt = w->value.at(oc, ic, ky, kx);
              if (wgt == 0.0) continue;
              for (int oy = 0; oy < OH; ++oy) {
                int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                double* gxr = gx.data() + (static_cast<size_t>(ic) * H + iy) * W;
                const double* gr = g.data() + (static_cast<size_t>(oc) * OH + oy) * OW;
                for (int ox = 0; ox < OW; ++ox) {
                  int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  gxr[ix] += wgt * gr[ox];
                }
              }
            }
    }
  });
}

// Group normalization over spatial dims with per-channel affine.
inline Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 3) throw ShapeError("group_norm: rank");
  int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (C % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  if (gamma->value.size() != C || beta->value.size() != C) throw ShapeError("group_norm: affine size");
  int cpg = C / groups;
  int n = cpg * H * W;

  auto xhat = std::make_shared<Tensor>(Shape{C, H, W});
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(groups));
  Tensor out(Shape{C, H, W});
  for (int gi = 0; gi < groups; ++gi) {
    const double* xs = xv.data() + static_cast<size_t>(gi) * n;
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += xs[i];
    mu /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      double d = xs[i] - mu;
      var += d * d;
    }
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(gi)] = is;
    double* xh = xhat->data() + static_cast<size_t>(gi) * n;
    double* op = out.data() + static_cast<size_t>(gi) * n;
    for (int c = 0; c < cpg; ++c) {
      double gam = gamma->value[gi * cpg + c];
      double bet = beta->value[gi * cpg + c];
      for (int i = 0; i < H * W; ++i) {
        double v = (xs[c * H * W + i] - mu) * is;
        xh[c * H * W + i] = v;
        op[c * H * W + i] = gam * v + bet;
      }
    }
  }

  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, groups, cpg, H, W, n, xhat, inv_std](Node& self) {
    const Tensor& g = self.grad;
    int plane = H * W;
    if (gamma->requires_grad || beta->requires_grad) {
      for (int c = 0; c < cpg * groups; ++c) {
        double dg = 0.0, db = 0.0;
        const double* gp = g.data() + static_cast<size_t>(c) * plane;
        const double* xh = xhat->data() + static_cast<size_t>(c) * plane;
        for (int i = 0; i < plane; ++i) {
          dg += gp[i] * xh[i];
          db += gp[i];
        }
        if (gamma->requires_grad) gamma->ensure_grad()[c] += dg;
        if (beta->requires_grad) beta->ensure_grad()[c] += db;
      }
    }
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      for (int gi = 0; gi < groups; ++gi) {
        const double* gp = g.data() + static_cast<size_t>(gi) * n;
        const double* xh = xhat->data() + static_cast<size_t>(gi) * n;
        double is = (*inv_std)[static_cast<size_t>(gi)];
        // h = upstream * gamma (per element); standard normalization backward.
        double mean_h = 0.0, mean_hx = 0.0;
        for (int c = 0; c < cpg; ++c) {
          double gam = gamma->value[gi * cpg + c];
          for (int i = 0; i < plane; ++i) {
            double h = gp[c * plane + i] * gam;
            mean_h += h;
            mean_hx += h * xh[c * plane + i];
          }
        }
        mean_h /= n;
        mean_hx /= n;
        double* gxp = gx.data() + static_cast<size_t>(gi) * n;
        for (int c = 0; c < cpg; ++c) {
          double gam = gamma->value[gi * cpg + c];
          for (int i = 0; i < plane; ++i) {
            double h = gp[c * plane + i] * gam;
            gxp[c * plane + i] += is * (h - mean_h - xh[c * plane + i] * mean_hx);
          }
        }
      }
    }
  });
}

inline Var upsample_nearest(const Var& x, int factor) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 3) throw ShapeError("upsample_nearest: rank");
  int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor out(Shape{C, H * factor, W * factor});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H * factor; ++y)
      for (int px = 0; px < W * factor; ++px) out.at(c, y, px) = xv.at(c, y / factor, px / factor);
  return make_op(std::move(out), {x}, [x, C, H, W, factor](Node& self) {
    Tensor& gx = x->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H * factor; ++y)
        for (int px = 0; px < W * factor; ++px)
          gx.at(c, y / factor, px / factor) += self.grad.at(c, y, px);
  });
}

// Broadcast single-channel map across the channels of x.
inline Var mul_map(const Var& m, const Var& x) {
  const Tensor& mv = m->value;
  const Tensor& xv = x->value;
  if (mv.ndim() != 3 || mv.dim(0) != 1) throw ShapeError("mul_map: map must be {1,H,W}");
  if (xv.ndim() != 3 || xv.dim(1) != mv.dim(1) || xv.dim(2) != mv.dim(2))
    throw ShapeError("mul_map: spatial mismatch");
  int C = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor out(xv.shape());
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < plane; ++i) out[c * plane + i] = mv[i] * xv[c * plane + i];
  return make_op(std::move(out), {m, x}, [m, x, C, plane](Node& self) {
    if (m->requires_grad) {
      Tensor& gm = m->ensure_grad();
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < plane; ++i) gm[i] += self.grad[c * plane + i] * x->value[c * plane + i];
    }
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < plane; ++i) gx[c * plane + i] += self.grad[c * plane + i] * m->value[i];
    }
  });
}

inline Var sum_channels(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 3) throw ShapeError("sum_channels: rank");
  int C = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  Tensor out(Shape{1, xv.dim(1), xv.dim(2)});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < plane; ++i) out[i] += xv[c * plane + i];
  return make_op(std::move(out), {x}, [x, C, plane](Node& self) {
    Tensor& gx = x->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < plane; ++i) gx[c * plane + i] += self.grad[i];
  });
}

// out[n] = sum_j A[n,j] * y[j], A constant.
inline Var matvec_const(std::shared_ptr<const Tensor> A, const Var& y) {
  if (A->ndim() != 2) throw ShapeError("matvec_const: A rank");
  int N = A->dim(0), M = A->dim(1);
  if (y->value.size() != M) throw ShapeError("matvec_const: size mismatch");
  Tensor out(Shape{N});
  for (int nn = 0; nn < N; ++nn) {
    const double* row = A->data() + static_cast<size_t>(nn) * M;
    double acc = 0.0;
    for (int j = 0; j < M; ++j) acc += row[j] * y->value[j];
    out[nn] = acc;
  }
  return make_op(std::move(out), {y}, [A, y, N, M](Node& self) {
    Tensor& gy = y->ensure_grad();
    for (int nn = 0; nn < N; ++nn) {
      double g = self.grad[nn];
      if (g == 0.0) continue;
      const double* row = A->data() + static_cast<size_t>(nn) * M;
      for (int j = 0; j < M; ++j) gy[j] += g * row[j];
    }
  });
}

}  // namespace racanet::ad
