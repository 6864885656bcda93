#include <catch2/catch_amalgamated.hpp>

#include "fd.hpp"
#include "ref_ops.hpp"
#include "racanet/autodiff/ops.hpp"
#include "racanet/core/rng.hpp"

using namespace racanet;

namespace {
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}
}  // namespace

TEST_CASE("tensor basics") {
  Tensor t(Shape{2, 3, 4}, 1.5);
  REQUIRE(t.size() == 24);
  REQUIRE(t.at(1, 2, 3) == 1.5);
  t.at(1, 2, 3) = 7.0;
  REQUIRE(t[23] == 7.0);
  REQUIRE_THROWS_AS(Tensor(Shape{0, 3}), ShapeError);
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());
  Rng c(42);
  double first = c.normal();
  Rng d(42);
  REQUIRE(first == d.normal());
}

TEST_CASE("elementwise op forward values") {
  Rng rng(1);
  Tensor a = random_tensor({5}, rng), b = random_tensor({5}, rng, 0.5, 2.0);
  auto va = ad::leaf(a, true), vb = ad::leaf(b, true);
  auto sum = ad::add(va, vb);
  auto prod = ad::mul(va, vb);
  auto quot = ad::div(va, vb);
  for (int i = 0; i < 5; ++i) {
    REQUIRE(sum->value[i] == Catch::Approx(a[i] + b[i]));
    REQUIRE(prod->value[i] == Catch::Approx(a[i] * b[i]));
    REQUIRE(quot->value[i] == Catch::Approx(a[i] / b[i]));
  }
  REQUIRE(ad::sum(va)->value[0] == Catch::Approx(a.sum()));
  REQUIRE(ad::mean(va)->value[0] == Catch::Approx(a.sum() / 5.0));
}

TEST_CASE("primitive gradients match finite differences") {
  Rng rng(7);
  auto a = ad::leaf(random_tensor({3, 4, 4}, rng), true);
  auto b = ad::leaf(random_tensor({3, 4, 4}, rng, 0.2, 1.5), true);
  auto m = ad::leaf(random_tensor({1, 4, 4}, rng, 0.1, 0.9), true);

  SECTION("arithmetic chain") {
    auto loss = [&] {
      auto x = ad::mul(ad::add(a, b), ad::sub(a, ad::scale(b, 0.3)));
      return ad::mean(ad::abs_(x));
    };
    auto res = refs::check_gradients(loss, {{"a", a}, {"b", b}}, rng, 8);
    REQUIRE(res.max_rel_err < 1e-5);
  }
  SECTION("activations") {
    auto loss = [&] {
      auto x = ad::gelu(a);
      x = ad::add(x, ad::sigmoid(b));
      x = ad::add(x, ad::relu(ad::sub(a, b)));
      return ad::sum(ad::mul(x, x));
    };
    auto res = refs::check_gradients(loss, {{"a", a}, {"b", b}}, rng, 8);
    REQUIRE(res.max_rel_err < 1e-5);
  }
  SECTION("log and clamp and div") {
    auto loss = [&] {
      auto x = ad::log_(ad::clamp(b, 0.25, 1.4));
      return ad::div(ad::sum(x), ad::add_scalar(ad::sum(b), 3.0));
    };
    auto res = refs::check_gradients(loss, {{"b", b}}, rng, 8);
    REQUIRE(res.max_rel_err < 1e-4);
  }
  SECTION("broadcast map and channel sum") {
    auto loss = [&] { return ad::sum(ad::sum_channels(ad::mul_map(m, a))); };
    auto res = refs::check_gradients(loss, {{"a", a}, {"m", m}}, rng, 8);
    REQUIRE(res.max_rel_err < 1e-5);
  }
  SECTION("concat and upsample") {
    auto loss = [&] {
      auto c = ad::concat_ch({a, b});
      return ad::mean(ad::mul(ad::upsample_nearest(c, 2), ad::upsample_nearest(c, 2)));
    };
    auto res = refs::check_gradients(loss, {{"a", a}, {"b", b}}, rng, 8);
    REQUIRE(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("conv2d forward matches reference and gradients check") {
  Rng rng(11);
  for (int stride : {1, 2}) {
    Tensor x = random_tensor({3, 6, 6}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
    Tensor b = random_tensor({4}, rng, -0.2, 0.2);
    auto vx = ad::leaf(x, true), vw = ad::leaf(w, true), vb = ad::leaf(b, true);
    auto y = ad::conv2d(vx, vw, vb, stride, 1);
    Tensor want = refs::conv2d(x, w, &b, stride, 1);
    REQUIRE(refs::max_abs_diff(y->value, want) < 1e-12);

    auto loss = [&] { return ad::mean(ad::mul(ad::conv2d(vx, vw, vb, stride, 1),
                                              ad::conv2d(vx, vw, vb, stride, 1))); };
    auto res = refs::check_gradients(loss, {{"x", vx}, {"w", vw}, {"b", vb}}, rng, 6);
    REQUIRE(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("conv2d 1x1 no-pad matches reference") {
  Rng rng(13);
  Tensor x = random_tensor({5, 4, 4}, rng);
  Tensor w = random_tensor({2, 5, 1, 1}, rng);
  auto y = ad::conv2d(ad::leaf(x, false), ad::leaf(w, false), nullptr, 1, 0);
  Tensor want = refs::conv2d(x, w, nullptr, 1, 0);
  REQUIRE(refs::max_abs_diff(y->value, want) < 1e-12);
}

TEST_CASE("group norm matches reference and gradients check") {
  Rng rng(17);
  Tensor x = random_tensor({8, 5, 5}, rng, -2.0, 2.0);
  Tensor gamma = random_tensor({8}, rng, 0.5, 1.5);
  Tensor beta = random_tensor({8}, rng, -0.3, 0.3);
  auto vx = ad::leaf(x, true), vg = ad::leaf(gamma, true), vbt = ad::leaf(beta, true);
  auto y = ad::group_norm(vx, vg, vbt, 4, 1e-5);
  Tensor want = refs::group_norm(x, gamma, beta, 4, 1e-5);
  REQUIRE(refs::max_abs_diff(y->value, want) < 1e-10);

  auto loss = [&] {
    auto out = ad::group_norm(vx, vg, vbt, 4, 1e-5);
    return ad::mean(ad::mul(out, ad::gelu(out)));
  };
  auto res = refs::check_gradients(loss, {{"x", vx}, {"gamma", vg}, {"beta", vbt}}, rng, 8);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("matvec_const gradient") {
  Rng rng(19);
  auto A = std::make_shared<Tensor>(random_tensor({3, 8}, rng));
  auto y = ad::leaf(random_tensor({8}, rng), true);
  auto loss = [&] { return ad::mean(ad::abs_(ad::matvec_const(A, y))); };
  auto res = refs::check_gradients(loss, {{"y", y}}, rng, 8);
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("no-grad mode prunes the graph") {
  Rng rng(23);
  auto a = ad::leaf(random_tensor({4}, rng), true);
  {
    ad::NoGradGuard ng;
    auto y = ad::sum(ad::mul(a, a));
    REQUIRE_FALSE(y->requires_grad);
    REQUIRE(y->parents.empty());
  }
  auto y = ad::sum(ad::mul(a, a));
  REQUIRE(y->requires_grad);
}

TEST_CASE("backward accumulates only into reachable leaves") {
  Rng rng(29);
  auto a = ad::leaf(random_tensor({4}, rng), true);
  auto b = ad::leaf(random_tensor({4}, rng), true);
  auto y = ad::sum(ad::mul(a, a));  // b unused
  ad::backward(y);
  REQUIRE(a->grad_touched);
  REQUIRE_FALSE(b->grad_touched);
}
