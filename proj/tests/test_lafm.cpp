#include <catch2/catch_amalgamated.hpp>

#include "fd.hpp"
#include "ref_ops.hpp"
#include "racanet/lafm.hpp"
#include "racanet/prior.hpp"

using namespace racanet;

namespace {
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}
}  // namespace

TEST_CASE("reliability maps are in range and branch-independent") {
  Rng rng(71);
  nn::SigmoidBranch br(3, 2, rng), bt(3, 2, rng);
  Tensor qr = random_tensor({2, 5, 5}, rng);
  Tensor qt = random_tensor({2, 5, 5}, rng);
  Tensor p = random_tensor({1, 5, 5}, rng, 0.0, 1.0);
  auto [rr1, rt1] = reliability(br, bt, ad::constant(qr), ad::constant(qt), ad::constant(p));
  REQUIRE(rr1->value.min() > 0.0);
  REQUIRE(rr1->value.max() < 1.0);
  REQUIRE(rt1->value.min() > 0.0);
  REQUIRE(rt1->value.max() < 1.0);

  Tensor qt2 = qt;
  qt2.at(1, 2, 2) += 1.0;
  auto [rr2, rt2] = reliability(br, bt, ad::constant(qr), ad::constant(qt2), ad::constant(p));
  REQUIRE(rr1->value == rr2->value);
  REQUIRE_FALSE(rt1->value == rt2->value);
}

TEST_CASE("reliability forward matches the straight-line oracle") {
  Rng rng(73);
  nn::SigmoidBranch br(3, 2, rng), bt(3, 2, rng);
  Tensor qr = random_tensor({2, 4, 4}, rng);
  Tensor qt = random_tensor({2, 4, 4}, rng);
  Tensor p = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
  auto [rr, rt] = reliability(br, bt, ad::constant(qr), ad::constant(qt), ad::constant(p));

  Tensor in_r(Shape{3, 4, 4});
  Tensor in_t(Shape{3, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      for (int c = 0; c < 2; ++c) {
        in_r.at(c, y, x) = qr.at(c, y, x);
        in_t.at(c, y, x) = qt.at(c, y, x);
      }
      in_r.at(2, y, x) = p.at(0, y, x);
      in_t.at(2, y, x) = p.at(0, y, x);
    }
  Tensor want_r = refs::sigmoid_branch(in_r, br.c1.w->value, br.c1.b->value, br.c2.w->value, br.c2.b->value);
  Tensor want_t = refs::sigmoid_branch(in_t, bt.c1.w->value, bt.c1.b->value, bt.c2.w->value, bt.c2.b->value);
  REQUIRE(refs::max_abs_diff(rr->value, want_r) < 1e-10);
  REQUIRE(refs::max_abs_diff(rt->value, want_t) < 1e-10);
}

TEST_CASE("joint feature reduces to the reliable modality") {
  Rng rng(79);
  Tensor qr = random_tensor({3, 4, 4}, rng);
  Tensor qt = random_tensor({3, 4, 4}, rng);
  Tensor ones(Shape{1, 4, 4}, 1.0), zeros(Shape{1, 4, 4}, 0.0);
  auto j = joint_feature(ad::constant(qr), ad::constant(qt), ad::constant(ones),
                         ad::constant(zeros), nullptr);
  REQUIRE(j->value == qr);

  Tensor half(Shape{1, 4, 4}, 0.5);
  auto j2 = joint_feature(ad::constant(qr), ad::constant(qr), ad::constant(half),
                          ad::constant(half), nullptr);
  REQUIRE(refs::max_abs_diff(j2->value, qr) < 1e-12);
}

TEST_CASE("joint feature matches the loop oracle with an upsample term") {
  Rng rng(83);
  Tensor qr = random_tensor({3, 4, 4}, rng);
  Tensor qt = random_tensor({3, 4, 4}, rng);
  Tensor rr = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
  Tensor rt = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
  Tensor up = random_tensor({3, 4, 4}, rng);
  auto j = joint_feature(ad::constant(qr), ad::constant(qt), ad::constant(rr), ad::constant(rt),
                         ad::constant(up));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        double want = rr.at(0, y, x) * qr.at(c, y, x) + rt.at(0, y, x) * qt.at(c, y, x) +
                      up.at(c, y, x);
        REQUIRE(std::abs(j->value.at(c, y, x) - want) < 1e-12);
      }
}

TEST_CASE("sparsify trivial cases") {
  SECTION("saturated prior and reliabilities reproduce a constant feature") {
    Tensor j(Shape{2, 6, 6});
    for (int i = 0; i < 36; ++i) {
      j[i] = 1.25;
      j[36 + i] = -0.5;
    }
    Tensor ones(Shape{1, 6, 6}, 1.0);
    AnchorGrid grid = sparsify(ad::constant(j), ad::constant(ones), ad::constant(ones),
                               ad::constant(ones), 3);
    REQUIRE(grid.my() == 2);
    REQUIRE(grid.mx() == 2);
    for (int m = 0; m < 4; ++m) {
      REQUIRE(grid.s->value[m] == Catch::Approx(1.25).epsilon(1e-6));
      REQUIRE(grid.s->value[4 + m] == Catch::Approx(-0.5).epsilon(1e-6));
      REQUIRE(grid.p->value[m] == Catch::Approx(1.0));
    }
  }
  SECTION("zero prior zeroes anchors") {
    Rng rng(89);
    Tensor j = random_tensor({2, 6, 6}, rng);
    Tensor zeros(Shape{1, 6, 6}, 0.0);
    Tensor r = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
    AnchorGrid grid = sparsify(ad::constant(j), ad::constant(zeros), ad::constant(r),
                               ad::constant(r), 3);
    for (int i = 0; i < grid.s->value.size(); ++i) REQUIRE(grid.s->value[i] == 0.0);
    for (int i = 0; i < grid.p->value.size(); ++i) REQUIRE(grid.p->value[i] == 0.0);
  }
}

TEST_CASE("sparsify pads 7x7 maps to nine anchors and matches the oracle") {
  Rng rng(97);
  Tensor j = random_tensor({3, 7, 7}, rng);
  Tensor p = random_tensor({1, 7, 7}, rng, 0.0, 1.0);
  Tensor rr = random_tensor({1, 7, 7}, rng, 0.0, 1.0);
  Tensor rt = random_tensor({1, 7, 7}, rng, 0.0, 1.0);
  AnchorGrid grid = sparsify(ad::constant(j), ad::constant(p), ad::constant(rr), ad::constant(rt), 3);
  REQUIRE(grid.my() * grid.mx() == 9);

  refs::SparsifyRef want = refs::sparsify(j, p, rr, rt, 3, 1e-6);
  REQUIRE(refs::max_abs_diff(grid.s->value, want.s) < 1e-6);
  for (int my = 0; my < 3; ++my)
    for (int mx = 0; mx < 3; ++mx)
      REQUIRE(std::abs(grid.p->value.at(0, my, mx) - want.pm.at(my, mx)) < 1e-12);
}

TEST_CASE("redistribute trivial cases") {
  SECTION("single anchor forces alpha one") {
    Rng rng(101);
    Tensor j = random_tensor({2, 3, 3}, rng);
    Tensor p = random_tensor({1, 3, 3}, rng, 0.0, 1.0);
    Tensor r = random_tensor({1, 3, 3}, rng, 0.0, 1.0);
    AnchorGrid grid = sparsify(ad::constant(j), ad::constant(p), ad::constant(r), ad::constant(r), 3);
    REQUIRE(grid.my() * grid.mx() == 1);
    auto red = redistribute(ad::constant(j), grid, 1);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x)
        for (int c = 0; c < 2; ++c)
          REQUIRE(red.f->value.at(c, y, x) == Catch::Approx(grid.s->value.at(c, 0, 0)));
  }
  SECTION("identical anchors give the shared prototype everywhere") {
    Tensor j(Shape{2, 9, 9}, 0.4);
    Tensor ones(Shape{1, 9, 9}, 1.0);
    AnchorGrid grid = sparsify(ad::constant(j), ad::constant(ones), ad::constant(ones),
                               ad::constant(ones), 3);
    auto red = redistribute(ad::constant(j), grid, 3);
    for (int i = 0; i < red.f->value.size(); ++i)
      REQUIRE(red.f->value[i] == Catch::Approx(0.4).epsilon(1e-6));
  }
}

TEST_CASE("redistribute matches the brute-force oracle and is sub-quadratic") {
  Rng rng(103);
  Tensor j = random_tensor({4, 12, 12}, rng);
  Tensor p = random_tensor({1, 12, 12}, rng, 0.0, 1.0);
  Tensor rr = random_tensor({1, 12, 12}, rng, 0.0, 1.0);
  Tensor rt = random_tensor({1, 12, 12}, rng, 0.0, 1.0);
  AnchorGrid grid = sparsify(ad::constant(j), ad::constant(p), ad::constant(rr), ad::constant(rt), 3);
  auto red = redistribute(ad::constant(j), grid, 3);

  refs::RedistributeRef want = refs::redistribute(j, grid.s->value, grid.p->value, 3, 3, 1e-6);
  REQUIRE(refs::max_rel_diff(red.f->value, want.f) < 1e-5);
  REQUIRE(red.interactions == want.interactions);
  REQUIRE(red.interactions <= 12 * 12 * 9);
  REQUIRE(red.interactions < static_cast<int64_t>(12 * 12) * (12 * 12));
}

TEST_CASE("redistribution weights are a distribution inside the anchor hull") {
  Rng rng(107);
  for (int trial = 0; trial < 40; ++trial) {
    int H = rng.randint(4, 12), W = rng.randint(4, 12);
    int ka = 3, kn = (trial % 2) ? 3 : 1;
    Tensor j = random_tensor({3, H, W}, rng, -2.0, 2.0);
    Tensor p = random_tensor({1, H, W}, rng, 0.0, 1.0);
    Tensor rr = random_tensor({1, H, W}, rng, 0.0, 1.0);
    Tensor rt = random_tensor({1, H, W}, rng, 0.0, 1.0);
    refs::SparsifyRef grid = refs::sparsify(j, p, rr, rt, ka, 1e-6);
    RedistributionDetail detail = redistribute_forward(j, grid.s, grid.pm, ka, kn, 1e-6);
    int S = kn * kn;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double sum = 0.0;
        for (int s = 0; s < S; ++s) sum += detail.alpha.at(s, y, x);
        REQUIRE(std::abs(sum - 1.0) < 1e-5);
        for (int c = 0; c < 3; ++c) {
          double lo = 1e300, hi = -1e300;
          for (int s = 0; s < S; ++s) {
            int m = detail.cand[(static_cast<size_t>(s) * H + y) * W + x];
            if (m < 0) continue;
            int my = m / grid.s.dim(2), mx = m % grid.s.dim(2);
            lo = std::min(lo, grid.s.at(c, my, mx));
            hi = std::max(hi, grid.s.at(c, my, mx));
          }
          REQUIRE(detail.f.at(c, y, x) >= lo - 1e-9);
          REQUIRE(detail.f.at(c, y, x) <= hi + 1e-9);
        }
      }
  }
}

TEST_CASE("with equal prototypes the weights follow the prior bias") {
  // All anchors share one prototype; alpha must be the softmax of
  // log(p_m + eps), strictly increasing in p_m.
  int H = 9, W = 9, ka = 3;
  Tensor j(Shape{2, H, W}, 0.7);
  Tensor s(Shape{2, 3, 3}, 0.7);
  Tensor pm(Shape{1, 3, 3});
  Rng rng(109);
  for (int i = 0; i < 9; ++i) pm[i] = 0.05 + 0.1 * i;
  RedistributionDetail detail = redistribute_forward(j, s, pm, ka, 3, 1e-6);
  // Center pixel sees all nine anchors.
  int y = 4, x = 4;
  std::vector<double> alpha(9);
  for (int slot = 0; slot < 9; ++slot) {
    int m = detail.cand[(static_cast<size_t>(slot) * H + y) * W + x];
    REQUIRE(m >= 0);
    alpha[static_cast<size_t>(m)] = detail.alpha.at(slot, y, x);
  }
  double z = 0.0;
  for (int m = 0; m < 9; ++m) z += pm[m] + 1e-6;
  for (int m = 0; m < 9; ++m) {
    REQUIRE(alpha[static_cast<size_t>(m)] == Catch::Approx((pm[m] + 1e-6) / z).epsilon(1e-9));
    if (m > 0) REQUIRE(alpha[static_cast<size_t>(m)] > alpha[static_cast<size_t>(m - 1)]);
  }
}

TEST_CASE("interaction count grows linearly in pixel count") {
  Rng rng(113);
  std::vector<int> sizes{16, 32, 64};
  std::vector<double> counts;
  for (int n : sizes) {
    Tensor j = random_tensor({2, n, n}, rng);
    Tensor ones(Shape{1, n, n}, 0.5);
    AnchorGrid grid = sparsify(ad::constant(j), ad::constant(ones), ad::constant(ones),
                               ad::constant(ones), 3);
    auto red = redistribute(ad::constant(j), grid, 3);
    counts.push_back(static_cast<double>(red.interactions));
    REQUIRE(red.interactions <= static_cast<int64_t>(n) * n * 9);
  }
  // Quadrupling the pixels must roughly quadruple the interactions.
  REQUIRE(std::abs(counts[1] / counts[0] - 4.0) < 0.4);
  REQUIRE(std::abs(counts[2] / counts[1] - 4.0) < 0.4);
}

TEST_CASE("single-stage LAFM matches a monolithic straight-line oracle") {
  Rng rng(127);
  int d = 2, H = 8, W = 8;
  nn::SigmoidBranch br(d + 1, d, rng), bt(d + 1, d, rng);
  Tensor qr = random_tensor({d, H, W}, rng);
  Tensor qt = random_tensor({d, H, W}, rng);
  Tensor p = random_tensor({1, H, W}, rng, 0.0, 1.0);

  auto vqr = ad::constant(qr), vqt = ad::constant(qt), vp = ad::constant(p);
  auto [rr, rt] = reliability(br, bt, vqr, vqt, vp);
  auto j = joint_feature(vqr, vqt, rr, rt, nullptr);
  AnchorGrid grid = sparsify(j, vp, rr, rt, 3);
  auto red = redistribute(j, grid, 3);

  // Straight-line oracle from the layer weights.
  Tensor in_r(Shape{d + 1, H, W}), in_t(Shape{d + 1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < d; ++c) {
        in_r.at(c, y, x) = qr.at(c, y, x);
        in_t.at(c, y, x) = qt.at(c, y, x);
      }
      in_r.at(d, y, x) = p.at(0, y, x);
      in_t.at(d, y, x) = p.at(0, y, x);
    }
  Tensor rr_ref = refs::sigmoid_branch(in_r, br.c1.w->value, br.c1.b->value, br.c2.w->value, br.c2.b->value);
  Tensor rt_ref = refs::sigmoid_branch(in_t, bt.c1.w->value, bt.c1.b->value, bt.c2.w->value, bt.c2.b->value);
  Tensor j_ref(Shape{d, H, W});
  for (int c = 0; c < d; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        j_ref.at(c, y, x) = rr_ref.at(0, y, x) * qr.at(c, y, x) + rt_ref.at(0, y, x) * qt.at(c, y, x);
  refs::SparsifyRef grid_ref = refs::sparsify(j_ref, p, rr_ref, rt_ref, 3, 1e-6);
  refs::RedistributeRef out_ref = refs::redistribute(j_ref, grid_ref.s, grid_ref.pm, 3, 3, 1e-6);
  REQUIRE(refs::max_abs_diff(red.f->value, out_ref.f) < 1e-4);
}

TEST_CASE("LAFM gradients match finite differences on a 6x6 toy") {
  Rng rng(131);
  int d = 2, H = 6, W = 6;
  nn::SigmoidBranch bp(4 * d, d, rng), br(d + 1, d, rng), bt(d + 1, d, rng);
  auto qr = ad::leaf(random_tensor({d, H, W}, rng), true);
  auto qt = ad::leaf(random_tensor({d, H, W}, rng), true);

  auto loss = [&] {
    auto p = crowd_prior(bp, qr, qt);
    auto [rr, rt] = reliability(br, bt, qr, qt, p);
    auto j = joint_feature(qr, qt, rr, rt, nullptr);
    AnchorGrid grid = sparsify(j, p, rr, rt, 3);
    auto red = redistribute(j, grid, 3);
    return ad::mean(ad::mul(red.f, ad::gelu(red.f)));
  };

  std::vector<std::pair<std::string, ad::Var>> vars{{"qr", qr}, {"qt", qt}};
  ParamMap params;
  br.collect("phi_r", params);
  bt.collect("phi_t", params);
  for (auto& [name, v] : params) vars.emplace_back(name, v);
  auto res = refs::check_gradients(loss, vars, rng, 5);
  INFO(res.worst);
  REQUIRE(res.max_rel_err < 1e-3);
}

TEST_CASE("zero prior keeps redistribution finite") {
  Rng rng(137);
  Tensor j = random_tensor({2, 6, 6}, rng);
  Tensor zeros(Shape{1, 6, 6}, 0.0);
  Tensor r = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
  AnchorGrid grid = sparsify(ad::constant(j), ad::constant(zeros), ad::constant(r), ad::constant(r), 3);
  auto red = redistribute(ad::constant(j), grid, 3);
  REQUIRE(red.f->value.all_finite());
  for (int i = 0; i < red.f->value.size(); ++i) REQUIRE(red.f->value[i] == 0.0);
}
