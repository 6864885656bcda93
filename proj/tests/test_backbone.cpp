#include <catch2/catch_amalgamated.hpp>

#include "fd.hpp"
#include "ref_ops.hpp"
#include "racanet/backbone.hpp"

using namespace racanet;

namespace {
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}
}  // namespace

TEST_CASE("stage shapes follow the stride schedule") {
  Rng rng(3);
  std::array<int, 4> channels{8, 16, 32, 32};
  Backbone bb(3, channels, rng);
  auto out = bb.forward(ad::constant(Tensor(Shape{3, 256, 256}, 0.1)));
  int want[4] = {64, 32, 16, 8};
  for (int l = 0; l < 4; ++l) {
    REQUIRE(out[static_cast<size_t>(l)]->value.dim(0) == channels[static_cast<size_t>(l)]);
    REQUIRE(out[static_cast<size_t>(l)]->value.dim(1) == want[l]);
    REQUIRE(out[static_cast<size_t>(l)]->value.dim(2) == want[l]);
  }
  REQUIRE_THROWS_WITH(bb.forward(ad::constant(Tensor(Shape{3, 100, 96}, 0.0))),
                      Catch::Matchers::ContainsSubstring("shape-violation"));
}

TEST_CASE("all-zero input produces finite deterministic features") {
  Rng rng(4);
  Backbone bb(1, {8, 16, 32, 32}, rng);
  auto a = bb.forward(ad::constant(Tensor(Shape{1, 64, 64}, 0.0)));
  auto b = bb.forward(ad::constant(Tensor(Shape{1, 64, 64}, 0.0)));
  for (int l = 0; l < 4; ++l) {
    REQUIRE(a[static_cast<size_t>(l)]->value.all_finite());
    REQUIRE(a[static_cast<size_t>(l)]->value == b[static_cast<size_t>(l)]->value);
  }
}

TEST_CASE("branches have independent parameters") {
  Rng rng(5);
  Backbone bb_r(3, {8, 16, 32, 32}, rng);
  Backbone bb_t(1, {8, 16, 32, 32}, rng);
  Tensor rgb = random_tensor({3, 64, 64}, rng, 0.0, 1.0);
  Tensor t1 = random_tensor({1, 64, 64}, rng, 0.0, 1.0);
  Tensor t2 = t1;
  t2.at(0, 10, 10) += 0.5;
  auto fr1 = bb_r.forward(ad::constant(rgb));
  auto ft1 = bb_t.forward(ad::constant(t1));
  auto fr2 = bb_r.forward(ad::constant(rgb));
  auto ft2 = bb_t.forward(ad::constant(t2));
  for (int l = 0; l < 4; ++l) {
    REQUIRE(fr1[static_cast<size_t>(l)]->value == fr2[static_cast<size_t>(l)]->value);
  }
  REQUIRE_FALSE(ft1[0]->value == ft2[0]->value);
}

TEST_CASE("projection with an identity slice selects channels") {
  Rng rng(6);
  Projections proj({4, 4, 4, 4}, {2, 2, 2, 2}, rng);
  // Overwrite stage-0 rgb weights with an identity slice picking channels 1, 3.
  Tensor w(Shape{2, 4, 1, 1});
  w.at(0, 1, 0, 0) = 1.0;
  w.at(1, 3, 0, 0) = 1.0;
  proj.rgb[0].w->value = w;
  Tensor f = random_tensor({4, 5, 5}, rng);
  auto [qr, qt] = proj.project(0, ad::constant(f), ad::constant(f));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      REQUIRE(qr->value.at(0, y, x) == Catch::Approx(f.at(1, y, x)));
      REQUIRE(qr->value.at(1, y, x) == Catch::Approx(f.at(3, y, x)));
    }
}

TEST_CASE("projection is per-pixel local") {
  Rng rng(7);
  Projections proj({4, 4, 4, 4}, {3, 3, 3, 3}, rng);
  Tensor f = random_tensor({4, 6, 6}, rng);
  Tensor f2 = f;
  f2.at(2, 3, 4) += 1.0;
  auto [q1, _u1] = proj.project(1, ad::constant(f), ad::constant(f));
  auto [q2, _u2] = proj.project(1, ad::constant(f2), ad::constant(f2));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        if (y == 3 && x == 4) continue;
        REQUIRE(q1->value.at(c, y, x) == q2->value.at(c, y, x));
      }
  bool changed = false;
  for (int c = 0; c < 3; ++c) changed |= q1->value.at(c, 3, 4) != q2->value.at(c, 3, 4);
  REQUIRE(changed);
}

TEST_CASE("projection is linear") {
  Rng rng(8);
  Projections proj({5, 5, 5, 5}, {3, 3, 3, 3}, rng);
  Tensor x = random_tensor({5, 4, 4}, rng);
  Tensor y = random_tensor({5, 4, 4}, rng);
  double a = 0.7, b = -1.3;
  Tensor mix(Shape{5, 4, 4});
  for (int i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
  auto [qmix, _u1] = proj.project(2, ad::constant(mix), ad::constant(mix));
  auto [qx, _u2] = proj.project(2, ad::constant(x), ad::constant(x));
  auto [qy, _u3] = proj.project(2, ad::constant(y), ad::constant(y));
  for (int i = 0; i < qmix->value.size(); ++i)
    REQUIRE(std::abs(qmix->value[i] - (a * qx->value[i] + b * qy->value[i])) < 1e-5);
}

TEST_CASE("backbone+projection gradients match finite differences") {
  Rng rng(9);
  Backbone bb(2, {4, 4, 4, 4}, rng);
  Projections proj({4, 4, 4, 4}, {2, 2, 2, 2}, rng);
  Tensor img = random_tensor({2, 32, 32}, rng, 0.0, 1.0);

  auto loss = [&] {
    auto f = bb.forward(ad::constant(img));
    ad::Var total;
    for (int l = 0; l < 4; ++l) {
      auto [qr, qt] = proj.project(l, f[static_cast<size_t>(l)], f[static_cast<size_t>(l)]);
      auto term = ad::mean(ad::mul(qr, ad::gelu(qt)));
      total = total ? ad::add(total, term) : term;
    }
    return total;
  };

  ParamMap params;
  bb.collect("bb", params);
  proj.collect(params);
  std::vector<std::pair<std::string, ad::Var>> vars(params.begin(), params.end());
  auto res = refs::check_gradients(loss, vars, rng, 3);
  INFO(res.worst);
  REQUIRE(res.max_rel_err < 1e-3);
}
