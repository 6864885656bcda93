#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "racanet/model.hpp"

namespace racanet {

struct LabeledSample {
  SamplePair pair;
  SoftLabelSet labels;
};

inline std::vector<LabeledSample> with_labels(const std::vector<SamplePair>& samples,
                                              const ModelConfig& cfg) {
  std::vector<LabeledSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back({s, make_soft_labels(s, cfg.sigma_policy, cfg.smooth_sigma)});
  return out;
}

using RecordSink = std::function<void(const json&)>;

namespace detail {
inline void require_finite(double v, const std::string& what, int epoch, int step) {
  if (!std::isfinite(v))
    throw Error("non-finite-loss", what + " at epoch " + std::to_string(epoch) + " step " +
                                       std::to_string(step));
}
}  // namespace detail

struct PretrainOutcome {
  double first_loss = 0.0, final_loss = 0.0;
  int steps = 0;
};

// Stage 1: optimize the warm-up objective over the crop/flip-augmented set.
inline PretrainOutcome pretrain_loop(RacaNet& model, nn::AdamW& opt,
                                     const std::vector<LabeledSample>& train,
                                     const RecordSink& sink = {}) {
  const ModelConfig& cfg = model.cfg;
  if (train.empty()) throw DataError("empty-dataset", "pretraining needs samples");
  ParamMap params = model.params();
  Rng rng(cfg.seed ^ 0x5deece66dull);
  std::vector<int> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);

  PretrainOutcome out;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
    rng.shuffle(idx);
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(cfg.batch)) {
      size_t end = std::min(idx.size(), start + static_cast<size_t>(cfg.batch));
      opt.zero_grad(params);
      ad::Var batch_total;
      double cap = 0.0, align = 0.0;
      for (size_t k = start; k < end; ++k) {
        const LabeledSample& s = train[static_cast<size_t>(idx[k])];
        AugmentedSample aug = random_crop_flip(s.pair, s.labels, cfg.crop, cfg.flip_p, rng);
        WarmupLoss wl = warmup_objective(model, aug.pair, aug.labels);
        cap += wl.cap;
        align += wl.align;
        batch_total = batch_total ? ad::add(batch_total, wl.total) : wl.total;
      }
      double n = static_cast<double>(end - start);
      batch_total = ad::scale(batch_total, 1.0 / n);
      double l_warm = batch_total->value[0];
      detail::require_finite(l_warm, "L_warm", epoch, step);
      ad::backward(batch_total);
      opt.step(params);
      if (out.steps == 0) out.first_loss = l_warm;
      out.final_loss = l_warm;
      ++out.steps;
      if (sink)
        sink(json{{"epoch", epoch},
                  {"step", step},
                  {"l_warm", l_warm},
                  {"l_cap", cap / n},
                  {"l_align", align / n},
                  {"lr", opt.lr}});
      ++step;
    }
  }
  return out;
}

struct StepScalars {
  double l_cnt = 0.0;
  double l_cons = 0.0;  // sum over stages
  double l_total = 0.0;
  double grad_phi_d = 0.0;
};

// One optimizer step on a batch of augmented samples.
inline StepScalars train_step(RacaNet& model, nn::AdamW& opt, ParamMap& params,
                              const std::vector<const SamplePair*>& batch, int epoch, int step) {
  opt.zero_grad(params);
  ad::Var batch_total;
  StepScalars sc;
  for (const SamplePair* p : batch) {
    Stage2Loss loss = total_loss(model, *p);
    detail::require_finite(loss.cnt->value[0], "L_cnt", epoch, step);
    for (int l = 0; l < 4; ++l) {
      detail::require_finite(loss.cons[static_cast<size_t>(l)],
                             "L_cons stage " + std::to_string(l + 1), epoch, step);
      sc.l_cons += loss.cons[static_cast<size_t>(l)];
    }
    sc.l_cnt += loss.cnt->value[0];
    batch_total = batch_total ? ad::add(batch_total, loss.total) : loss.total;
  }
  double n = static_cast<double>(batch.size());
  batch_total = ad::scale(batch_total, 1.0 / n);
  sc.l_cnt /= n;
  sc.l_cons /= n;
  sc.l_total = batch_total->value[0];
  detail::require_finite(sc.l_total, "L_total", epoch, step);
  ad::backward(batch_total);
  sc.grad_phi_d = nn::AdamW::grad_norm(params, "disc.");
  opt.step(params);
  return sc;
}

struct TrainOutcome {
  MetricSummary best;
  int best_epoch = -1;
  std::vector<json> eval_rows;  // one per periodic evaluation
  int steps = 0;
  double final_l_cnt = 0.0;
};

// Stage 2: optimize L_total; periodically evaluate on the validation split
// and keep the checkpoint with the best GAME(0).
inline TrainOutcome train_loop(RacaNet& model, nn::AdamW& opt,
                               const std::vector<LabeledSample>& train,
                               const std::vector<SamplePair>& val,
                               const std::string& best_ckpt_path, const RecordSink& sink = {}) {
  const ModelConfig& cfg = model.cfg;
  if (train.empty()) throw DataError("empty-dataset", "training needs samples");
  ParamMap params = model.params();
  Rng rng(cfg.seed ^ 0xda7a5e7ull);
  std::vector<int> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);

  TrainOutcome out;
  int step = 0;
  auto maybe_eval = [&](int epoch) {
    if (val.empty()) return;
    EvalResult ev = evaluate(model, val);
    json row{{"epoch", epoch},          {"game0", ev.metrics.game[0]}, {"game1", ev.metrics.game[1]},
             {"game2", ev.metrics.game[2]}, {"game3", ev.metrics.game[3]}, {"rmse", ev.metrics.rmse}};
    out.eval_rows.push_back(row);
    if (out.best_epoch < 0 || ev.metrics.game[0] < out.best.game[0]) {
      out.best = ev.metrics;
      out.best_epoch = epoch;
      if (!best_ckpt_path.empty()) save_checkpoint(model, &opt, epoch, "train", best_ckpt_path);
    }
  };

  std::vector<AugmentedSample> augmented;
  augmented.reserve(static_cast<size_t>(cfg.batch));
  for (int epoch = 0; epoch < cfg.epochs_train; ++epoch) {
    rng.shuffle(idx);
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(cfg.batch)) {
      size_t end = std::min(idx.size(), start + static_cast<size_t>(cfg.batch));
      augmented.clear();
      for (size_t k = start; k < end; ++k) {
        const LabeledSample& s = train[static_cast<size_t>(idx[k])];
        augmented.push_back(random_crop_flip(s.pair, s.labels, cfg.crop, cfg.flip_p, rng));
      }
      std::vector<const SamplePair*> batch;
      for (const auto& a : augmented) batch.push_back(&a.pair);
      StepScalars sc = train_step(model, opt, params, batch, epoch, step);
      out.final_l_cnt = sc.l_cnt;
      ++out.steps;
      if (sink)
        sink(json{{"epoch", epoch},
                  {"step", step},
                  {"l_cnt", sc.l_cnt},
                  {"l_cons", sc.l_cons},
                  {"l_total", sc.l_total},
                  {"lr", opt.lr},
                  {"grad_phi_d", sc.grad_phi_d}});
      ++step;
    }
    if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs_train) maybe_eval(epoch);
  }
  if (cfg.epochs_train == 0) maybe_eval(-1);
  return out;
}

}  // namespace racanet
