#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "racanet/alignment.hpp"
#include "racanet/backbone.hpp"
#include "racanet/data/augment.hpp"
#include "racanet/io/config.hpp"
#include "racanet/io/tensor_archive.hpp"
#include "racanet/lafm.hpp"
#include "racanet/nn/adamw.hpp"
#include "racanet/objective.hpp"
#include "racanet/prior.hpp"

namespace racanet {

struct StageOutputs {
  ad::Var prior;   // P^l
  ad::Var rel_r, rel_t;
  ad::Var disc;
  ad::Var joint;
  ad::Var fused;   // F_out^l
  int64_t interactions = 0;
};

struct ForwardResult {
  ad::Var density;  // {1,H,W}
  std::array<ad::Var, 4> qr, qt;
  std::array<StageOutputs, 4> stages;
};

struct Stage1Result {
  std::array<ad::Var, 4> qr, qt, prior;
  std::array<SoftMatchResult, 4> rt, tr;  // r->t and t->r matching per stage
};

// The full two-branch network: pyramid backbones, projections, prior branch,
// per-stage LAFM, and the progressive decoder with the density head.
class RacaNet {
 public:
  ModelConfig cfg;
  Backbone backbone_r, backbone_t;
  Projections proj;
  std::array<nn::SigmoidBranch, 4> prior_branch;
  std::array<nn::SigmoidBranch, 4> rel_r_branch, rel_t_branch;
  std::array<nn::Conv2d, 4> disc_branch;
  std::array<nn::Conv2d, 3> adapter;  // adapter[l]: proj_dims[l+1] -> proj_dims[l]
  std::array<nn::Conv2d, 3> dec_conv;
  std::array<nn::GroupNorm, 3> dec_norm;
  nn::Conv2d head_conv;
  nn::GroupNorm head_norm;

  explicit RacaNet(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    Rng rng(cfg.seed);
    backbone_r = Backbone(3, cfg.channels, rng);
    backbone_t = Backbone(1, cfg.channels, rng);
    proj = Projections(cfg.channels, cfg.proj_dims, rng);
    for (int l = 0; l < 4; ++l) {
      int d = cfg.proj_dims[static_cast<size_t>(l)];
      prior_branch[static_cast<size_t>(l)] = nn::SigmoidBranch(4 * d, d, rng);
      rel_r_branch[static_cast<size_t>(l)] = nn::SigmoidBranch(d + 1, d, rng);
      rel_t_branch[static_cast<size_t>(l)] = nn::SigmoidBranch(d + 1, d, rng);
      disc_branch[static_cast<size_t>(l)] = nn::Conv2d(d, 1, 3, 1, 1, true, rng, -2.0);
    }
    for (int l = 0; l < 3; ++l)
      adapter[static_cast<size_t>(l)] = nn::Conv2d(cfg.proj_dims[static_cast<size_t>(l) + 1],
                                                   cfg.proj_dims[static_cast<size_t>(l)], 1, 1, 0,
                                                   true, rng);
    for (int i = 0; i < 3; ++i) {
      int l = 2 - i;  // decoder fuses stage l with the upsampled coarser path
      int in_c = cfg.proj_dims[static_cast<size_t>(l) + 1] + cfg.proj_dims[static_cast<size_t>(l)];
      dec_conv[static_cast<size_t>(i)] = nn::Conv2d(in_c, cfg.proj_dims[static_cast<size_t>(l)], 3, 1, 1, true, rng);
      dec_norm[static_cast<size_t>(i)] = nn::GroupNorm(cfg.proj_dims[static_cast<size_t>(l)]);
    }
    head_conv = nn::Conv2d(cfg.proj_dims[0], 1, 3, 1, 1, true, rng);
    head_norm = nn::GroupNorm(1);
  }

  ParamMap params() const {
    ParamMap out;
    backbone_r.collect("backbone_r", out);
    backbone_t.collect("backbone_t", out);
    proj.collect(out);
    for (int l = 0; l < 4; ++l) {
      prior_branch[static_cast<size_t>(l)].collect("prior." + std::to_string(l), out);
      rel_r_branch[static_cast<size_t>(l)].collect("rel_r." + std::to_string(l), out);
      rel_t_branch[static_cast<size_t>(l)].collect("rel_t." + std::to_string(l), out);
      disc_branch[static_cast<size_t>(l)].collect("disc." + std::to_string(l), out);
    }
    for (int l = 0; l < 3; ++l) adapter[static_cast<size_t>(l)].collect("adapter." + std::to_string(l), out);
    for (int i = 0; i < 3; ++i) {
      dec_conv[static_cast<size_t>(i)].collect("decoder." + std::to_string(i) + ".conv", out);
      dec_norm[static_cast<size_t>(i)].collect("decoder." + std::to_string(i) + ".norm", out);
    }
    head_conv.collect("head.conv", out);
    head_norm.collect("head.norm", out);
    return out;
  }

  std::pair<std::array<ad::Var, 4>, std::array<ad::Var, 4>> extract_project(
      const SamplePair& pair) const {
    auto fr = backbone_r.forward(ad::constant(pair.rgb));
    auto ft = backbone_t.forward(ad::constant(pair.thermal));
    std::array<ad::Var, 4> qr, qt;
    for (int l = 0; l < 4; ++l) {
      auto [a, b] = proj.project(l, fr[static_cast<size_t>(l)], ft[static_cast<size_t>(l)]);
      qr[static_cast<size_t>(l)] = a;
      qt[static_cast<size_t>(l)] = b;
    }
    return {qr, qt};
  }

  // Pretraining-stage graph: priors plus bidirectional soft matching.
  Stage1Result stage1_forward(const SamplePair& pair) const {
    Stage1Result r;
    auto [qr, qt] = extract_project(pair);
    r.qr = qr;
    r.qt = qt;
    int kd = cfg.k_delta();
    for (int l = 0; l < 4; ++l) {
      r.prior[static_cast<size_t>(l)] =
          crowd_prior(prior_branch[static_cast<size_t>(l)], qr[static_cast<size_t>(l)], qt[static_cast<size_t>(l)]);
      r.rt[static_cast<size_t>(l)] = soft_match(qr[static_cast<size_t>(l)], qt[static_cast<size_t>(l)], kd);
      r.tr[static_cast<size_t>(l)] = soft_match(qt[static_cast<size_t>(l)], qr[static_cast<size_t>(l)], kd);
    }
    return r;
  }

  // Counting-stage graph: LAFM top-down from the coarsest stage, then the
  // progressive decoder (upsample, concat with the finer stage, fuse) and the
  // density head (conv, norm, ReLU, x4 upsample).
  ForwardResult forward(const SamplePair& pair) const {
    ForwardResult r;
    auto [qr, qt] = extract_project(pair);
    r.qr = qr;
    r.qt = qt;
    ad::Var prev;
    for (int l = 3; l >= 0; --l) {
      StageOutputs& st = r.stages[static_cast<size_t>(l)];
      st.prior = crowd_prior(prior_branch[static_cast<size_t>(l)], qr[static_cast<size_t>(l)], qt[static_cast<size_t>(l)]);
      auto [rr, rt] = reliability(rel_r_branch[static_cast<size_t>(l)], rel_t_branch[static_cast<size_t>(l)],
                                  qr[static_cast<size_t>(l)], qt[static_cast<size_t>(l)], st.prior);
      st.rel_r = rr;
      st.rel_t = rt;
      st.disc = discrepancy(disc_branch[static_cast<size_t>(l)], qr[static_cast<size_t>(l)], qt[static_cast<size_t>(l)]);
      ad::Var up;
      if (l < 3) up = adapter[static_cast<size_t>(l)].forward(ad::upsample_nearest(prev, 2));
      st.joint = joint_feature(qr[static_cast<size_t>(l)], qt[static_cast<size_t>(l)], rr, rt, up);
      AnchorGrid grid = sparsify(st.joint, st.prior, rr, rt, cfg.ka);
      auto red = redistribute(st.joint, grid, cfg.kn);
      st.fused = red.f;
      st.interactions = red.interactions;
      prev = st.fused;
    }

    ad::Var x = r.stages[3].fused;
    for (int i = 0; i < 3; ++i) {
      int l = 2 - i;
      x = ad::concat_ch({ad::upsample_nearest(x, 2), r.stages[static_cast<size_t>(l)].fused});
      x = ad::gelu(dec_norm[static_cast<size_t>(i)].forward(dec_conv[static_cast<size_t>(i)].forward(x)));
    }
    ad::Var y = ad::relu(head_norm.forward(head_conv.forward(x)));
    r.density = ad::upsample_nearest(y, 4);
    return r;
  }
};

// ---- Stage objectives ---------------------------------------------------------

struct WarmupLoss {
  ad::Var total;
  double cap = 0.0, align = 0.0;
};

// Sum over stages of crowd-prior loss plus bidirectional alignment loss.
inline WarmupLoss warmup_objective(const RacaNet& model, const SamplePair& pair,
                                   const SoftLabelSet& labels) {
  Stage1Result s1 = model.stage1_forward(pair);
  WarmupLoss out;
  ad::Var total;
  for (int l = 0; l < 4; ++l) {
    ad::Var cap = cap_loss(s1.prior[static_cast<size_t>(l)], labels.prior[static_cast<size_t>(l)]);
    ad::Var align = align_loss(s1.qr[static_cast<size_t>(l)], s1.qt[static_cast<size_t>(l)],
                               s1.rt[static_cast<size_t>(l)].aligned, s1.tr[static_cast<size_t>(l)].aligned,
                               s1.prior[static_cast<size_t>(l)]);
    out.cap += cap->value[0];
    out.align += align->value[0];
    ad::Var stage = ad::add(cap, align);
    total = total ? ad::add(total, stage) : stage;
  }
  out.total = total;
  return out;
}

struct Stage2Loss {
  ad::Var total;
  ad::Var cnt;
  std::array<double, 4> cons{0, 0, 0, 0};
  ForwardResult fwd;
};

// L_total = L_cnt + lambda * sum_l L_cons^l. With lambda == 0 the consistency
// graph is not built at all, so the discrepancy branch receives no gradient.
inline Stage2Loss total_loss(const RacaNet& model, const SamplePair& pair) {
  Stage2Loss out;
  out.fwd = model.forward(pair);
  PointPosteriors post = point_posteriors(pair.points, pair.height(), pair.width(), model.cfg.sigma_bayes);
  out.cnt = count_loss(out.fwd.density, post);
  out.total = out.cnt;
  if (model.cfg.lambda_cons > 0) {
    ad::Var cons_sum;
    for (int l = 0; l < 4; ++l) {
      const StageOutputs& st = out.fwd.stages[static_cast<size_t>(l)];
      ad::Var c = cons_loss(st.rel_r, st.rel_t, st.disc);
      out.cons[static_cast<size_t>(l)] = c->value[0];
      cons_sum = cons_sum ? ad::add(cons_sum, c) : c;
    }
    out.total = ad::add(out.cnt, ad::scale(cons_sum, model.cfg.lambda_cons));
  }
  return out;
}

// ---- Checkpointing ------------------------------------------------------------

inline const std::vector<std::string>& stage1_transfer_prefixes() {
  static const std::vector<std::string> prefixes{"backbone_r.", "backbone_t.", "proj_r.",
                                                 "proj_t.", "prior."};
  return prefixes;
}

inline void save_checkpoint(const RacaNet& model, const nn::AdamW* opt, int epoch,
                            const std::string& stage, const std::string& path) {
  TensorArchive a;
  a.meta["fingerprint"] = std::to_string(model.cfg.fingerprint());
  a.meta["epoch"] = std::to_string(epoch);
  a.meta["stage"] = stage;
  a.meta["config"] = to_json(model.cfg).dump();
  for (const auto& [name, p] : model.params()) a.items["param/" + name] = p->value;
  if (opt) {
    a.meta["opt_step"] = "per-slot";
    for (const auto& [name, slot] : opt->slots()) {
      a.items["opt/" + name + ".m"] = slot.m;
      a.items["opt/" + name + ".v"] = slot.v;
      a.items["opt/" + name + ".t"] = Tensor::scalar(static_cast<double>(slot.t));
    }
  }
  a.save(path);
}

inline void verify_fingerprint(const TensorArchive& a, const ModelConfig& cfg,
                               const std::string& path) {
  auto it = a.meta.find("fingerprint");
  if (it == a.meta.end() || it->second != std::to_string(cfg.fingerprint()))
    throw Error("fingerprint-mismatch", "checkpoint " + path + " does not match the model config");
}

inline void copy_parameters(RacaNet& model, const TensorArchive& a,
                            const std::vector<std::string>* prefixes) {
  ParamMap map = model.params();
  for (auto& [name, p] : map) {
    if (prefixes) {
      bool wanted = false;
      for (const auto& pre : *prefixes)
        if (name.rfind(pre, 0) == 0) {
          wanted = true;
          break;
        }
      if (!wanted) continue;
    }
    auto it = a.items.find("param/" + name);
    if (it == a.items.end())
      throw ShapeError("shape-mismatch", "checkpoint missing parameter " + name);
    if (!(it->second.same_shape(p->value)))
      throw ShapeError("shape-mismatch", "parameter " + name + " has shape " +
                                             shape_str(it->second.shape()) + ", expected " +
                                             shape_str(p->value.shape()));
    p->value = it->second;
  }
}

// Fresh model; backbone, projections and prior branch are copied bitwise from
// the pretraining checkpoint when one is given.
inline RacaNet build(const ModelConfig& cfg, const std::optional<std::string>& pretrain_ckpt) {
  RacaNet model(cfg);
  if (pretrain_ckpt) {
    TensorArchive a = TensorArchive::load(*pretrain_ckpt);
    verify_fingerprint(a, cfg, *pretrain_ckpt);
    copy_parameters(model, a, &stage1_transfer_prefixes());
  }
  return model;
}

// Full parameter load (evaluation / resume).
inline RacaNet load_model(const ModelConfig& cfg, const std::string& path) {
  RacaNet model(cfg);
  TensorArchive a = TensorArchive::load(path);
  verify_fingerprint(a, cfg, path);
  copy_parameters(model, a, nullptr);
  return model;
}

inline ModelConfig config_from_checkpoint(const std::string& path) {
  TensorArchive a = TensorArchive::load(path);
  auto it = a.meta.find("config");
  if (it == a.meta.end()) throw DataError("malformed-file", "checkpoint has no embedded config");
  return model_config_from_json(json::parse(it->second));
}

// ---- Evaluation ----------------------------------------------------------------

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * n - 2;
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

inline Tensor pad_reflect_to_multiple(const Tensor& img, int multiple) {
  int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  int H2 = (H + multiple - 1) / multiple * multiple;
  int W2 = (W + multiple - 1) / multiple * multiple;
  if (H2 == H && W2 == W) return img;
  Tensor out(Shape{C, H2, W2});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H2; ++y)
      for (int x = 0; x < W2; ++x)
        out.at(c, y, x) = img.at(c, reflect_index(y, H), reflect_index(x, W));
  return out;
}

struct EvalResult {
  MetricSummary metrics;
  std::vector<double> pred_counts, gt_counts;
};

// Full-image evaluation: reflection-pad to multiples of 32, predict, crop the
// density back, then GAME(0..3) and RMSE against the point annotations.
inline EvalResult evaluate(const RacaNet& model, const std::vector<SamplePair>& samples) {
  if (samples.empty()) throw DataError("empty-dataset", "evaluate needs at least one sample");
  ad::NoGradGuard ng;
  EvalResult out;
  std::array<double, 4> game_acc{0, 0, 0, 0};
  for (const auto& s : samples) {
    SamplePair padded = s;
    padded.rgb = pad_reflect_to_multiple(s.rgb, 32);
    padded.thermal = pad_reflect_to_multiple(s.thermal, 32);
    ForwardResult f = model.forward(padded);
    Tensor density(Shape{s.height(), s.width()});
    for (int y = 0; y < s.height(); ++y)
      for (int x = 0; x < s.width(); ++x) density.at(y, x) = f.density->value.at(0, y, x);
    for (int L = 0; L < 4; ++L) game_acc[static_cast<size_t>(L)] += game(density, s.points, L);
    out.pred_counts.push_back(density.sum());
    out.gt_counts.push_back(static_cast<double>(s.points.size()));
  }
  for (int L = 0; L < 4; ++L)
    out.metrics.game[static_cast<size_t>(L)] = game_acc[static_cast<size_t>(L)] / samples.size();
  out.metrics.rmse = rmse(out.pred_counts, out.gt_counts);
  return out;
}

// Fraction of crowd pixels (stage-1 soft label > 0.5) whose argmax matching
// offset equals the true stage-1 shift of their region. Returns -1 when no
// pixel qualifies.
inline double shift_recovery_rate(const RacaNet& model, const SamplePair& pair,
                                  const SoftLabelSet& labels) {
  if (pair.meta.is_null() || !pair.meta.contains("shifts")) return -1.0;
  ad::NoGradGuard ng;
  Stage1Result s1 = model.stage1_forward(pair);
  auto [best_dy, best_dx] = argmax_offsets(s1.rt[0].alpha->value, model.cfg.k_delta());
  const Tensor& mask = labels.prior[0];
  int H = mask.dim(0), W = mask.dim(1);
  int rx_n = pair.meta["regions"][0].get<int>();
  int ry_n = pair.meta["regions"][1].get<int>();
  double region_w = static_cast<double>(pair.width()) / rx_n;
  double region_h = static_cast<double>(pair.height()) / ry_n;
  int total = 0, hit = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (mask.at(y, x) <= 0.5) continue;
      double full_x = 4.0 * x + 1.5, full_y = 4.0 * y + 1.5;
      int rx = std::min(rx_n - 1, static_cast<int>(full_x / region_w));
      int ry = std::min(ry_n - 1, static_cast<int>(full_y / region_h));
      const auto& s = pair.meta["shifts"][static_cast<size_t>(ry) * rx_n + rx];
      int want_dx = static_cast<int>(std::lround(s[0].get<double>() / 4.0));
      int want_dy = static_cast<int>(std::lround(s[1].get<double>() / 4.0));
      ++total;
      if (static_cast<int>(best_dx.at(y, x)) == want_dx &&
          static_cast<int>(best_dy.at(y, x)) == want_dy)
        ++hit;
    }
  return total == 0 ? -1.0 : static_cast<double>(hit) / total;
}

}  // namespace racanet
