/*
 * Copyright 2026 The taxseg Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "reference.hpp"
#include "tax/error.hpp"
#include "tax/ops.hpp"

using namespace tax;
namespace ref = tax::testing;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool grad = true) {
  const auto n = static_cast<std::size_t>(numel(shape));
  return Tensor::from(std::move(shape), ref::random_floats(rng, n), grad);
}

// Scalar probe: sum(out * R) for a fixed random R, so every output element
// contributes a distinct weight to the gradient.
Tensor project(const Tensor& out, const Tensor& r) { return ops::sum(ops::mul(out, r)); }

double project(const ref::Vec& out, const std::vector<float>& r) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d: ones kernel counts the receptive field") {
  auto x = Tensor::full({1, 1, 3, 3}, 1.0f);
  auto k = Tensor::full({1, 1, 3, 3}, 1.0f);
  auto y = ops::conv2d(x, k, Tensor{}, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.data()[4] == 9.0f);
  CHECK(y.data()[0] == 4.0f);
  CHECK(y.data()[1] == 6.0f);
}

TEST_CASE("conv2d: delta kernel is the identity") {
  Rng rng(3);
  auto x = random_tensor(rng, {2, 1, 5, 6}, false);
  std::vector<float> delta(9, 0.0f);
  delta[4] = 1.0f;
  auto y = ops::conv2d(x, Tensor::from({1, 1, 3, 3}, delta), Tensor{}, 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: shape errors name the offending dimension") {
  auto x = Tensor::zeros({1, 2, 5, 5});
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor{}, 1), ShapeError);
  CHECK_THROWS_WITH_AS(ops::conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor{}, 1),
                       doctest::Contains("dim 1"), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor{}, 1), ShapeError);
  // (5 + 0 - 3) / 2 is exact, (6 + 0 - 3) / 2 is not.
  CHECK_NOTHROW(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor{}, 0, 2));
  CHECK_THROWS_WITH_AS(ops::conv2d(Tensor::zeros({1, 2, 6, 5}), Tensor::zeros({1, 2, 3, 3}),
                                   Tensor{}, 0, 2),
                       doctest::Contains("not exact"), ShapeError);
}

TEST_CASE("conv2d: gradients match f64 finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    const ref::Conv c{1, 2, 5, 5, 3, 3, 3, 1, 1};
    auto x = random_tensor(rng, {1, 2, 5, 5});
    auto w = random_tensor(rng, {3, 2, 3, 3});
    auto b = random_tensor(rng, {3});
    const auto r = ref::random_floats(rng, 75);
    auto loss = project(ops::conv2d(x, w, b, 1, 1), Tensor::from({1, 3, 5, 5}, r));
    loss.backward();

    const auto X = ref::to_f64(x.data()), Wt = ref::to_f64(w.data()), B = ref::to_f64(b.data());
    const auto gx = ref::finite_differences([&](const ref::Vec& v) { return project(ref::conv2d(c, v, Wt, &B), r); }, X);
    const auto gw = ref::finite_differences([&](const ref::Vec& v) { return project(ref::conv2d(c, X, v, &B), r); }, Wt);
    const auto gb = ref::finite_differences([&](const ref::Vec& v) { return project(ref::conv2d(c, X, Wt, &v), r); }, B);
    CHECK(ref::max_rel_error(x.grad(), gx) < 1e-3);
    CHECK(ref::max_rel_error(w.grad(), gw) < 1e-3);
    CHECK(ref::max_rel_error(b.grad(), gb) < 1e-3);
  }
}

TEST_CASE("conv2d: strided gradients match finite differences") {
  Rng rng(11);
  const ref::Conv c{2, 2, 7, 7, 2, 3, 3, 1, 2};
  auto x = random_tensor(rng, {2, 2, 7, 7});
  auto w = random_tensor(rng, {2, 2, 3, 3});
  const auto r = ref::random_floats(rng, 2 * 2 * 4 * 4);
  auto y = ops::conv2d(x, w, Tensor{}, 1, 2);
  REQUIRE(y.shape() == Shape{2, 2, 4, 4});
  project(y, Tensor::from(y.shape(), r)).backward();
  const auto X = ref::to_f64(x.data()), Wt = ref::to_f64(w.data());
  CHECK(ref::max_rel_error(x.grad(), ref::finite_differences([&](const ref::Vec& v) {
          return project(ref::conv2d(c, v, Wt, nullptr), r);
        }, X)) < 1e-3);
  CHECK(ref::max_rel_error(w.grad(), ref::finite_differences([&](const ref::Vec& v) {
          return project(ref::conv2d(c, X, v, nullptr), r);
        }, Wt)) < 1e-3);
}

TEST_CASE("routed_conv2d: constant route reduces to conv2d bit-for-bit") {
  Rng rng(5);
  auto x = random_tensor(rng, {2, 3, 6, 6}, false);
  std::vector<Tensor> ks, bs;
  for (int k = 0; k < 4; ++k) {
    ks.push_back(random_tensor(rng, {2, 3, 3, 3}, false));
    bs.push_back(random_tensor(rng, {2}, false));
  }
  for (int k = 1; k <= 4; ++k) {
    const auto routed = ops::routed_conv2d(x, ks, bs, LabelMap(2, 6, 6, k));
    const auto plain = ops::conv2d(x, ks[k - 1], bs[k - 1], 1, 1);
    for (std::int64_t i = 0; i < plain.numel(); ++i) REQUIRE(routed.data()[i] == plain.data()[i]);
  }
}

TEST_CASE("routed_conv2d: half/half route equals two masked convolutions") {
  Rng rng(8);
  auto x = random_tensor(rng, {1, 2, 5, 6}, false);
  std::vector<Tensor> ks{random_tensor(rng, {3, 2, 3, 3}, false), random_tensor(rng, {3, 2, 3, 3}, false)};
  LabelMap route(1, 5, 6, 2);
  for (int y = 0; y < 5; ++y)
    for (int xx = 0; xx < 3; ++xx) route.at(0, y, xx) = 1;
  const auto out = ops::routed_conv2d(x, ks, {}, route);
  const auto left = ops::conv2d(x, ks[0], Tensor{}, 1);
  const auto right = ops::conv2d(x, ks[1], Tensor{}, 1);
  for (int co = 0; co < 3; ++co)
    for (int y = 0; y < 5; ++y)
      for (int xx = 0; xx < 6; ++xx) {
        const auto i = (co * 5 + y) * 6 + xx;
        CHECK(out.data()[i] == (xx < 3 ? left.data()[i] : right.data()[i]));
      }
}

TEST_CASE("routed_conv2d: unused subset receives exactly zero gradient") {
  Rng rng(9);
  auto x = random_tensor(rng, {1, 2, 4, 4});
  std::vector<Tensor> ks{random_tensor(rng, {2, 2, 3, 3}), random_tensor(rng, {2, 2, 3, 3}),
                         random_tensor(rng, {2, 2, 3, 3})};
  std::vector<Tensor> bs{random_tensor(rng, {2}), random_tensor(rng, {2}), random_tensor(rng, {2})};
  LabelMap route(1, 4, 4, 1);
  route.at(0, 2, 2) = 3;
  ops::mean(ops::routed_conv2d(x, ks, bs, route)).backward();
  for (float g : ks[1].grad()) CHECK(g == 0.0f);
  for (float g : bs[1].grad()) CHECK(g == 0.0f);
  bool nonzero = false;
  for (float g : ks[2].grad()) nonzero = nonzero || g != 0.0f;
  CHECK(nonzero);
}

TEST_CASE("routed_conv2d: route validation") {
  std::vector<Tensor> ks{Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1, 1, 3, 3})};
  auto x = Tensor::zeros({1, 1, 4, 4});
  CHECK_THROWS_AS(ops::routed_conv2d(x, ks, {}, LabelMap(1, 4, 4, 3)), ValueError);
  CHECK_THROWS_AS(ops::routed_conv2d(x, ks, {}, LabelMap(1, 4, 4, 0)), ValueError);
  CHECK_THROWS_AS(ops::routed_conv2d(x, ks, {}, LabelMap(1, 4, 3, 1)), ShapeError);
  std::vector<Tensor> uneven{Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({2, 1, 3, 3})};
  CHECK_THROWS_AS(ops::routed_conv2d(x, uneven, {}, LabelMap(1, 4, 4, 1)), ShapeError);
}

TEST_CASE("routed_conv2d: gradients match the brute-force f64 route") {
  Rng rng(21);
  const ref::Conv c{2, 2, 4, 5, 2, 3, 3, 1, 1};
  auto x = random_tensor(rng, {2, 2, 4, 5});
  std::vector<Tensor> ks, bs;
  for (int k = 0; k < 3; ++k) {
    ks.push_back(random_tensor(rng, {2, 2, 3, 3}));
    bs.push_back(random_tensor(rng, {2}));
  }
  LabelMap route(2, 4, 5);
  for (auto& v : route.values) v = rng.uniform_int(1, 3);
  const auto r = ref::random_floats(rng, 2 * 2 * 4 * 5);
  project(ops::routed_conv2d(x, ks, bs, route), Tensor::from({2, 2, 4, 5}, r)).backward();

  std::vector<ref::Vec> W, B;
  for (int k = 0; k < 3; ++k) {
    W.push_back(ref::to_f64(ks[k].data()));
    B.push_back(ref::to_f64(bs[k].data()));
  }
  const auto X = ref::to_f64(x.data());
  CHECK(ref::max_rel_error(x.grad(), ref::finite_differences([&](const ref::Vec& v) {
          return project(ref::routed_conv2d(c, v, W, B, route.values), r);
        }, X)) < 1e-3);
  for (int k = 0; k < 3; ++k) {
    auto gw = ref::finite_differences([&](const ref::Vec& v) {
      auto W2 = W;
      W2[k] = v;
      return project(ref::routed_conv2d(c, X, W2, B, route.values), r);
    }, W[k]);
    CHECK(ref::max_rel_error(ks[k].grad(), gw) < 1e-3);
  }
}

TEST_CASE("relu and softmax basics") {
  auto r = ops::relu(Tensor::from({2}, {-1.5f, 2.0f}));
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 2.0f);

  auto s = ops::softmax_channel(Tensor::from({1, 2}, {0.0f, 0.0f}), 1);
  CHECK(s.data()[0] == doctest::Approx(0.5));
  CHECK(s.data()[1] == doctest::Approx(0.5));

  auto ce = ops::cross_entropy_map(Tensor::zeros({1, 2, 1, 1}), LabelMap(1, 1, 1, 0));
  CHECK(ce.item() == doctest::Approx(std::numbers::ln2).epsilon(1e-6));
}

TEST_CASE("softmax_channel sums to one for logits in [-50, 50]") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = Tensor::from({2, 5, 3, 3}, ref::random_floats(rng, 90, -50.0, 50.0));
    auto y = ops::softmax_channel(x, 1);
    for (int b = 0; b < 2; ++b)
      for (int p = 0; p < 9; ++p) {
        double s = 0;
        for (int c = 0; c < 5; ++c) s += y.data()[(b * 5 + c) * 9 + p];
        CHECK(std::abs(s - 1.0) <= 1e-6);
      }
  }
}

TEST_CASE("cross_entropy_map: analytic values and errors") {
  // Uniform logits, K = 4.
  auto uniform = ops::cross_entropy_map(Tensor::zeros({1, 4, 2, 2}), LabelMap(1, 2, 2, 3));
  CHECK(uniform.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  // Margin 20 in favour of the correct class.
  std::vector<float> logits(2 * 3 * 3, 0.0f);
  for (int p = 0; p < 9; ++p) logits[1 * 9 + p] = 20.0f;
  auto saturated = ops::cross_entropy_map(Tensor::from({1, 2, 3, 3}, logits), LabelMap(1, 3, 3, 1));
  CHECK(saturated.item() < 1e-6f);

  auto bad = Tensor::full({1, 2, 2, 2}, 0.7f);
  CHECK_THROWS_WITH_AS(ops::cross_entropy_map(Tensor::zeros({1, 2, 2, 2}), bad),
                       doctest::Contains("pixel (b=0, y=0, x=0)"), ValueError);
  CHECK_THROWS_AS(ops::cross_entropy_map(Tensor::zeros({1, 2, 2, 2}), LabelMap(1, 2, 2, 2)),
                  ValueError);
}

TEST_CASE("cross_entropy_map: gradient matches finite differences") {
  Rng rng(17);
  auto x = random_tensor(rng, {1, 3, 4, 4});
  // Random distribution target.
  std::vector<float> t(48);
  for (int p = 0; p < 16; ++p) {
    double s = 0;
    double raw[3];
    for (int c = 0; c < 3; ++c) s += raw[c] = rng.uniform(0.1, 1.0);
    for (int c = 0; c < 3; ++c) t[c * 16 + p] = static_cast<float>(raw[c] / s);
  }
  ops::cross_entropy_map(x, Tensor::from({1, 3, 4, 4}, t)).backward();
  const auto T = ref::to_f64(t);
  const auto g = ref::finite_differences([&](const ref::Vec& v) { return ref::cross_entropy(v, T, 1, 3, 16); },
                                         ref::to_f64(x.data()));
  CHECK(ref::max_rel_error(x.grad(), g) < 1e-3);
}

TEST_CASE("cosine_similarity") {
  auto a = Tensor::from({3}, {1.0f, 2.0f, -1.0f});
  CHECK(ops::cosine_similarity(a, a).item() == doctest::Approx(1.0));
  CHECK(ops::cosine_similarity(Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1})).item() == 0.0f);
  CHECK(ops::cosine_similarity(ops::scale(a, 2.0f), a).item() == doctest::Approx(1.0));
  // Zero vector is guarded by eps.
  CHECK(ops::cosine_similarity(Tensor::zeros({3}), a).item() == 0.0f);
}

TEST_CASE("avg_downsample / nearest_upsample") {
  auto c = ops::avg_downsample(Tensor::full({1, 2, 4, 4}, 3.5f), 2, 2);
  CHECK(c.shape() == Shape{1, 2, 2, 2});
  for (float v : c.data()) CHECK(v == 3.5f);

  auto one_hot = ops::avg_downsample(Tensor::from({2, 2}, {1, 0, 0, 0}), 2, 2);
  CHECK(one_hot.item() == 0.25f);

  auto up = ops::nearest_upsample(Tensor::from({1, 1}, {7.0f}), 2, 2);
  CHECK(up.shape() == Shape{2, 2});
  for (float v : up.data()) CHECK(v == 7.0f);

  CHECK_THROWS_AS(ops::avg_downsample(Tensor::zeros({5, 4}), 2, 2), ShapeError);

  // up(down(x)) == x for cell-constant x.
  auto cells = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto x = ops::nearest_upsample(cells, 3, 2);
  auto back = ops::nearest_upsample(ops::avg_downsample(x, 3, 2), 3, 2);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("backward accumulates over shared subexpressions") {
  // f(x) = sum(x*x + x) -> df/dx = 2x + 1; x is reached along three paths.
  auto x = Tensor::from({3}, {0.5f, -1.0f, 2.0f}, true);
  ops::sum(ops::add(ops::mul(x, x), x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(-1.0));
  CHECK(x.grad()[2] == doctest::Approx(5.0));

  // A reused intermediate: h = relu(conv(x)); L = sum(h*h) + sum(h).
  Rng rng(4);
  const ref::Conv c{1, 1, 4, 4, 2, 3, 3, 1, 1};
  auto xi = random_tensor(rng, {1, 1, 4, 4});
  auto w = random_tensor(rng, {2, 1, 3, 3}, false);
  auto h = ops::relu(ops::conv2d(xi, w, Tensor{}, 1));
  ops::add(ops::sum(ops::mul(h, h)), ops::sum(h)).backward();
  const auto W = ref::to_f64(w.data());
  const auto X = ref::to_f64(xi.data());
  auto f = [&](const ref::Vec& v) {
    const auto hv = ref::relu(ref::conv2d(c, v, W, nullptr));
    double s = 0;
    for (double e : hv) s += e * e + e;
    return s;
  };
  const auto g = ref::finite_differences(f, X);
  CHECK(ref::max_rel_error(xi.grad(), g) < 1e-3);
}

TEST_CASE("graph is released after backward and not recorded under NoGradGuard") {
  auto x = Tensor::from({2}, {1.0f, 2.0f}, true);
  auto y = ops::scale(x, 3.0f);
  auto loss = ops::sum(y);
  CHECK(loss.has_node());
  loss.backward();
  CHECK_FALSE(loss.has_node());
  CHECK_FALSE(y.has_node());
  {
    NoGradGuard guard;
    auto z = ops::sum(ops::scale(x, 2.0f));
    CHECK_FALSE(z.requires_grad());
    CHECK_FALSE(z.has_node());
  }
}

TEST_CASE("reference kernel path gives the same forward values") {
  Rng rng(31);
  auto x = random_tensor(rng, {2, 3, 7, 7}, false);
  auto w = random_tensor(rng, {4, 3, 3, 3}, false);
  auto b = random_tensor(rng, {4}, false);
  auto fast = ops::conv2d(x, w, b, 1);
  Tensor slow;
  {
    ScopedKernelPath path(KernelPath::kReference);
    slow = ops::conv2d(x, w, b, 1);
  }
  for (std::int64_t i = 0; i < fast.numel(); ++i) CHECK(fast.data()[i] == slow.data()[i]);
}
