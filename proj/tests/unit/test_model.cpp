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
#include <set>

#include "fixtures.hpp"
#include "tax/error.hpp"
#include "tax/model.hpp"
#include "tax/ops.hpp"
#include "tax/optim.hpp"

using namespace tax;

namespace {

std::vector<RgbImage> random_images(Rng& rng, int n, int h, int w) {
  std::vector<RgbImage> out;
  for (int i = 0; i < n; ++i) {
    RgbImage img(h, w);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    out.push_back(std::move(img));
  }
  return out;
}

Tensor batch_of(const std::vector<RgbImage>& imgs) {
  std::vector<const RgbImage*> ptrs;
  for (const auto& i : imgs) ptrs.push_back(&i);
  return images_to_tensor(ptrs);
}

void fill(Tensor& t, float v) {
  for (auto& x : t.mutable_data()) x = v;
}

}  // namespace

TEST_CASE("image tensors map bytes to [-1, 1] in NCHW order") {
  RgbImage img(1, 2);
  img.pixels = {0, 255, 51, 102, 153, 204};
  const Tensor t = image_to_tensor(img);
  CHECK(t.shape() == Shape{1, 3, 1, 2});
  CHECK(t.data()[0] == doctest::Approx(-1.0));
  CHECK(t.data()[1] == doctest::Approx(102 / 127.5 - 1));
  CHECK(t.data()[2] == doctest::Approx(1.0));
}

TEST_CASE("logit shape matches [B, K, H, W] and bad sizes are rejected") {
  Rng rng(1);
  const auto cfg = testing::tiny_unet();
  SegModel plain(cfg, 0, 3);
  const auto x = batch_of(random_images(rng, 2, 16, 8));
  NoGradGuard ng;
  CHECK(plain.forward_vanilla(x).shape() == Shape{2, 3, 16, 8});
  CHECK_THROWS_AS(plain.forward_vanilla(batch_of(random_images(rng, 1, 10, 8))), ShapeError);
  CHECK_THROWS_AS(plain.forward_tax(x, LabelMap(2, 16, 8, 1)), Error);
}

TEST_CASE("zeroed head gives a uniform softmax at every pixel") {
  Rng rng(2);
  SegModel plain(testing::tiny_unet(), 0, 3);
  fill(plain.kernels().weights[0], 0.f);
  NoGradGuard ng;
  const auto p = ops::softmax_channel(plain.forward_vanilla(batch_of(random_images(rng, 1, 8, 8))));
  for (float v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("routed model has N+1 equally shaped subsets in separate tagged groups") {
  SegModel m(testing::tiny_unet(), 3, 5);
  REQUIRE(m.kernels().size() == 4);
  for (const auto& w : m.kernels().weights) CHECK(w.shape() == m.kernels().weights[0].shape());
  REQUIRE(m.groups().size() == 5);
  CHECK(m.groups()[0].tag == ParamTag::backbone());
  for (int k = 1; k <= 3; ++k) CHECK(m.groups()[k].tag == ParamTag::annotator(k));
  CHECK(m.groups()[4].tag == ParamTag::shared());

  std::set<const void*> seen;
  std::set<std::string> names;
  for (const auto& g : m.groups())
    for (const auto& p : g.params) {
      CHECK(seen.insert(p.tensor.impl()).second);
      CHECK(names.insert(p.name).second);
    }
}

TEST_CASE("routing reductions") {
  Rng rng(4);
  SegModel m(testing::tiny_unet(), 3, 6);
  // Give every subset distinct values so the reductions are not vacuous.
  for (int k = 0; k < 4; ++k)
    for (auto& v : m.kernels().weights[static_cast<std::size_t>(k)].mutable_data()) v += 0.1f * static_cast<float>(k);
  const auto x = batch_of(random_images(rng, 2, 8, 8));
  NoGradGuard ng;
  for (int k = 1; k <= 4; ++k) {
    const auto a = m.forward_tax(x, LabelMap(2, 8, 8, k));
    const auto b = m.forward_subset(x, k);
    REQUIRE(a.numel() == b.numel());
    for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
  }
  CHECK_THROWS_AS(m.forward_subset(x, 5), ValueError);
}

TEST_CASE("identical subsets make the output independent of the route") {
  Rng rng(7);
  SegModel m(testing::tiny_unet(), 4, 8);  // fresh model: subsets start equal
  const auto x = batch_of(random_images(rng, 2, 8, 8));
  LabelMap route(2, 8, 8, 1);
  for (auto& r : route.values) r = rng.uniform_int(1, 5);
  NoGradGuard ng;
  const auto a = m.forward_tax(x, route);
  const auto b = m.forward_tax(x, LabelMap(2, 8, 8, 1));
  for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
}

TEST_CASE("a single batch can be overfit below CE 0.05") {
  testing::TempDir dir("overfit");
  Rng rng(9);
  auto cfg = testing::tiny_unet();
  SegModel m(cfg, 0, 10);
  std::vector<RgbImage> imgs;
  std::vector<Mask> masks;
  SceneSpec spec = testing::tiny_dataset_spec().scene;
  for (int i = 0; i < 4; ++i) {
    const Scene s = generate_scene(static_cast<std::uint64_t>(i) + 100, spec, 0);
    imgs.push_back(s.image);
    masks.push_back(s.mask);
  }
  std::vector<const Mask*> mp;
  for (const auto& mk : masks) mp.push_back(&mk);
  const Tensor x = batch_of(imgs);
  const LabelMap target = to_label_map(mp);
  OptimState opt(0.05f, 0.9f, m.groups());
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    Tensor loss = ops::cross_entropy_map(m.forward_vanilla(x), target);
    if (step == 0) first = loss.data()[0];
    last = loss.data()[0];
    loss.backward();
    sgd_step(m.groups(), opt, {ParamTag::backbone()});
  }
  CHECK(first > 0.5);
  CHECK(last < 0.05);
}

TEST_CASE("uncertainty mask: quantile extremes and entropy ordering") {
  const int K = 3, H = 2, W = 3;
  // One pixel with uniform logits, the rest peaked to different degrees.
  std::vector<float> logits(static_cast<std::size_t>(K * H * W), 0.f);
  for (int p = 1; p < H * W; ++p) logits[static_cast<std::size_t>(p)] = static_cast<float>(p);  // class 0 logit
  CHECK(uncertainty_from_logits(logits, K, H, W, 0.0) == Mask(H, W, 0));
  CHECK(uncertainty_from_logits(logits, K, H, W, 1.0) == Mask(H, W, 1));
  const Mask top1 = uncertainty_from_logits(logits, K, H, W, 1.0 / 6.0);
  CHECK(top1.labels == std::vector<std::uint8_t>{1, 0, 0, 0, 0, 0});
  // ceil(q * HW) pixels
  const Mask q = uncertainty_from_logits(logits, K, H, W, 0.34);
  CHECK(std::count(q.labels.begin(), q.labels.end(), 1) == 3);
  const auto e = pixel_entropy(logits, K, H * W);
  CHECK(e[0] == doctest::Approx(std::log(3.0)));
  for (int p = 1; p < H * W; ++p) CHECK(e[static_cast<std::size_t>(p)] < e[static_cast<std::size_t>(p - 1)]);
  CHECK_THROWS_AS(uncertainty_from_logits(logits, K, H, W, 1.5), ValueError);
}

TEST_CASE("boundary band marks pixels next to a label change") {
  const int K = 2, H = 1, W = 4;
  // argmax: 0 0 1 1
  std::vector<float> logits = {1, 1, 0, 0, 0, 0, 1, 1};
  const Mask b = boundary_band_from_logits(logits, K, H, W);
  CHECK(b.labels == std::vector<std::uint8_t>{0, 1, 1, 0});
}

TEST_CASE("argmax masks break ties toward the lower class") {
  const Tensor logits = Tensor::from({1, 2, 1, 2}, {0.5f, 1.f, 0.5f, 0.f});
  CHECK(argmax_masks(logits)[0].labels == std::vector<std::uint8_t>{0, 0});
}
