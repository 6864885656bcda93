#include <catch2/catch_amalgamated.hpp>

#include "fd.hpp"
#include "ref_ops.hpp"
#include "racanet/prior.hpp"

using namespace racanet;

namespace {
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}
}  // namespace

TEST_CASE("prior stays in (0,1) and tolerates equal inputs") {
  Rng rng(31);
  nn::SigmoidBranch branch(8, 2, rng);
  Tensor q = random_tensor({2, 6, 6}, rng);
  auto p = crowd_prior(branch, ad::constant(q), ad::constant(q));
  REQUIRE(p->value.dim(0) == 1);
  REQUIRE(p->value.min() > 0.0);
  REQUIRE(p->value.max() < 1.0);

  // Swapping the modalities changes only the first two concat blocks; it must
  // run and stay in range.
  Tensor q2 = random_tensor({2, 6, 6}, rng);
  auto a = crowd_prior(branch, ad::constant(q), ad::constant(q2));
  auto b = crowd_prior(branch, ad::constant(q2), ad::constant(q));
  REQUIRE(a->value.all_finite());
  REQUIRE(b->value.all_finite());
}

TEST_CASE("prior forward matches the straight-line oracle") {
  Rng rng(37);
  nn::SigmoidBranch branch(8, 2, rng);
  Tensor qr = random_tensor({2, 4, 4}, rng);
  Tensor qt = random_tensor({2, 4, 4}, rng);
  auto p = crowd_prior(branch, ad::constant(qr), ad::constant(qt));

  Tensor input(Shape{8, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 2; ++c) {
        input.at(c, y, x) = qr.at(c, y, x);
        input.at(2 + c, y, x) = qt.at(c, y, x);
        input.at(4 + c, y, x) = std::abs(qr.at(c, y, x) - qt.at(c, y, x));
        input.at(6 + c, y, x) = qr.at(c, y, x) * qt.at(c, y, x);
      }
  Tensor want = refs::sigmoid_branch(input, branch.c1.w->value, branch.c1.b->value,
                                     branch.c2.w->value, branch.c2.b->value);
  REQUIRE(refs::max_abs_diff(p->value, want) < 1e-5);
}

TEST_CASE("cap_loss analytic cases") {
  SECTION("uniform 0.5 maps give ln 2") {
    Tensor half(Shape{1, 6, 6}, 0.5);
    auto loss = cap_loss(ad::constant(half), half);
    REQUIRE(loss->value[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SECTION("empty-scene limit vanishes") {
    Tensor zero(Shape{1, 6, 6}, 0.0);
    Tensor tiny(Shape{1, 6, 6}, 1e-9);
    auto loss = cap_loss(ad::constant(tiny), zero);
    // The BCE clamp floors the loss at -ln(1 - 1e-6) per pixel.
    REQUIRE(loss->value[0] < 1e-5);
  }
  SECTION("matching hard maps give near-zero loss") {
    Tensor t(Shape{1, 4, 4});
    for (int i = 0; i < 8; ++i) t[i] = 1.0;
    Tensor p = t;
    for (int i = 0; i < p.size(); ++i) p[i] = p[i] > 0.5 ? 1.0 - 1e-7 : 1e-7;
    auto loss = cap_loss(ad::constant(p), t);
    REQUIRE(loss->value[0] < 1e-5);
  }
}

TEST_CASE("cap_loss matches the summation oracle on random maps") {
  Rng rng(41);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor p = random_tensor({1, 8, 8}, rng, 1e-4, 1.0 - 1e-4);
    Tensor t = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
    auto loss = cap_loss(ad::constant(p), t);
    REQUIRE(std::abs(loss->value[0] - refs::cap_loss(p, t)) < 1e-6);
    REQUIRE(loss->value[0] >= 0.0);
  }
}

TEST_CASE("cap_loss rejects shape mismatch") {
  Tensor p(Shape{1, 4, 4}, 0.5);
  Tensor t(Shape{1, 5, 5}, 0.5);
  REQUIRE_THROWS_AS(cap_loss(ad::constant(p), t), ShapeError);
}

TEST_CASE("cap_loss gradients through the prior branch match finite differences") {
  Rng rng(43);
  nn::SigmoidBranch branch(8, 2, rng);
  Tensor qr = random_tensor({2, 4, 4}, rng);
  Tensor qt = random_tensor({2, 4, 4}, rng);
  Tensor target = random_tensor({1, 4, 4}, rng, 0.0, 1.0);

  auto loss = [&] {
    auto p = crowd_prior(branch, ad::constant(qr), ad::constant(qt));
    return cap_loss(p, target);
  };
  ParamMap params;
  branch.collect("phi_p", params);
  std::vector<std::pair<std::string, ad::Var>> vars(params.begin(), params.end());
  auto res = refs::check_gradients(loss, vars, rng, 6);
  INFO(res.worst);
  REQUIRE(res.max_rel_err < 1e-3);
}
