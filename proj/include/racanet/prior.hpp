#pragma once

#include "racanet/nn/layers.hpp"

namespace racanet {

// Crowd-aware prior branch: sigmoid branch over the stacked dual-modal
// features and their interactions [Q_r, Q_t, |Q_r - Q_t|, Q_r * Q_t].
inline ad::Var crowd_prior(const nn::SigmoidBranch& branch, const ad::Var& qr, const ad::Var& qt) {
  require_same_shape(qr->value, qt->value, "crowd_prior");
  ad::Var diff = ad::abs_(ad::sub(qr, qt));
  ad::Var prod = ad::mul(qr, qt);
  return branch.forward(ad::concat_ch({qr, qt, diff, prod}));
}

// BCE (mean over pixels) plus Dice complement with smoothing 1.0. The
// prediction is clamped away from {0,1} inside the cross-entropy only.
inline ad::Var cap_loss(const ad::Var& p, const ad::Var& target) {
  require_same_shape(p->value, target->value, "cap_loss");
  const double kClamp = 1e-6;
  const double kDiceEps = 1.0;
  ad::Var pc = ad::clamp(p, kClamp, 1.0 - kClamp);
  ad::Var one_minus_p = ad::add_scalar(ad::neg(pc), 1.0);
  ad::Var one_minus_t = ad::add_scalar(ad::neg(target), 1.0);
  ad::Var ce = ad::add(ad::mul(target, ad::log_(pc)), ad::mul(one_minus_t, ad::log_(one_minus_p)));
  ad::Var bce = ad::neg(ad::mean(ce));

  // Squared-denominator Dice: exactly 1 whenever p == target.
  ad::Var inter = ad::sum(ad::mul(p, target));
  ad::Var denom = ad::add_scalar(ad::add(ad::sum(ad::mul(p, p)), ad::sum(ad::mul(target, target))), kDiceEps);
  ad::Var dice = ad::div(ad::add_scalar(ad::scale(inter, 2.0), kDiceEps), denom);
  return ad::add(bce, ad::add_scalar(ad::neg(dice), 1.0));
}

inline ad::Var cap_loss(const ad::Var& p, const Tensor& target) {
  Tensor t3 = target;
  if (t3.ndim() == 2) {
    Tensor tmp(Shape{1, target.dim(0), target.dim(1)});
    std::copy(target.data(), target.data() + target.size(), tmp.data());
    t3 = std::move(tmp);
  }
  return cap_loss(p, ad::constant(std::move(t3)));
}

}  // namespace racanet
