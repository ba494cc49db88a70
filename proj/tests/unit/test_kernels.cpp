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

#include <vector>

#include "reference.hpp"
#include "tax/kernels.hpp"

using namespace tax;
using namespace tax::kernels;
namespace ref = tax::testing;

namespace {

std::vector<ConvGeometry> geometries() {
  std::vector<ConvGeometry> out;
  auto g = [](int b, int ci, int h, int w, int co, int k, int pad, int stride) {
    ConvGeometry x;
    x.batch = b;
    x.in_channels = ci;
    x.in_height = h;
    x.in_width = w;
    x.out_channels = co;
    x.kernel_h = x.kernel_w = k;
    x.padding = pad;
    x.stride = stride;
    return x;
  };
  out.push_back(g(1, 1, 3, 3, 1, 3, 1, 1));
  out.push_back(g(2, 3, 8, 8, 4, 3, 1, 1));
  out.push_back(g(3, 2, 7, 5, 3, 3, 1, 1));
  out.push_back(g(2, 4, 9, 9, 2, 3, 1, 2));
  out.push_back(g(1, 2, 6, 6, 2, 5, 2, 1));
  out.push_back(g(2, 3, 5, 4, 2, 1, 0, 1));
  return out;
}

ref::Vec as_f64(const std::vector<float>& v) { return ref::Vec(v.begin(), v.end()); }

}  // namespace

TEST_CASE("parallel conv kernels match the serial reference bit-for-bit") {
  Rng rng(41);
  for (const auto& g : geometries()) {
    CAPTURE(g.in_height);
    CAPTURE(g.stride);
    const auto in = ref::random_floats(rng, g.input_size());
    const auto w = ref::random_floats(rng, g.weight_size());
    const auto b = ref::random_floats(rng, static_cast<std::size_t>(g.out_channels));
    const auto go = ref::random_floats(rng, g.output_size());

    std::vector<float> o1(g.output_size()), o2(g.output_size());
    serial::conv2d_forward(g, in, w, b, o1);
    parallel::conv2d_forward(g, in, w, b, o2);
    CHECK(o1 == o2);

    std::vector<float> gi1(g.input_size(), 7.f), gi2(g.input_size(), -7.f);
    serial::conv2d_grad_input(g, go, w, gi1);
    parallel::conv2d_grad_input(g, go, w, gi2);
    CHECK(gi1 == gi2);

    std::vector<float> gw1(g.weight_size()), gw2(g.weight_size());
    std::vector<float> gb1(static_cast<std::size_t>(g.out_channels)), gb2(gb1.size());
    serial::conv2d_grad_weight(g, in, go, gw1, gb1);
    parallel::conv2d_grad_weight(g, in, go, gw2, gb2);
    CHECK(gw1 == gw2);
    CHECK(gb1 == gb2);
  }
}

TEST_CASE("serial conv forward agrees with the f64 oracle") {
  Rng rng(42);
  for (const auto& g : geometries()) {
    const auto in = ref::random_floats(rng, g.input_size());
    const auto w = ref::random_floats(rng, g.weight_size());
    const auto b = ref::random_floats(rng, static_cast<std::size_t>(g.out_channels));
    std::vector<float> out(g.output_size());
    serial::conv2d_forward(g, in, w, b, out);
    const ref::Conv c{g.batch, g.in_channels, g.in_height, g.in_width, g.out_channels,
                      g.kernel_h, g.kernel_w, g.padding, g.stride};
    const auto bias = as_f64(b);
    const auto expect = ref::conv2d(c, as_f64(in), as_f64(w), &bias);
    REQUIRE(expect.size() == out.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-6));
  }
}

TEST_CASE("parallel routed kernels match the serial reference bit-for-bit") {
  Rng rng(43);
  for (int subsets : {1, 2, 5}) {
    ConvGeometry g;
    g.batch = 3;
    g.in_channels = 4;
    g.in_height = 9;
    g.in_width = 7;
    g.out_channels = 3;
    std::vector<std::vector<float>> w, b;
    KernelSubsets ks;
    for (int k = 0; k < subsets; ++k) {
      w.push_back(ref::random_floats(rng, g.weight_size()));
      b.push_back(ref::random_floats(rng, static_cast<std::size_t>(g.out_channels)));
    }
    for (int k = 0; k < subsets; ++k) {
      ks.weights.emplace_back(w[k]);
      ks.biases.emplace_back(b[k]);
    }
    std::vector<std::int32_t> route(static_cast<std::size_t>(g.batch) * g.out_height() * g.out_width());
    for (auto& r : route) r = rng.uniform_int(1, subsets);
    const auto in = ref::random_floats(rng, g.input_size());
    const auto go = ref::random_floats(rng, g.output_size());

    std::vector<float> o1(g.output_size()), o2(g.output_size());
    serial::routed_conv2d_forward(g, in, ks, route, o1);
    parallel::routed_conv2d_forward(g, in, ks, route, o2);
    CHECK(o1 == o2);

    std::vector<float> gi1(g.input_size()), gi2(g.input_size());
    serial::routed_conv2d_grad_input(g, go, ks, route, gi1);
    parallel::routed_conv2d_grad_input(g, go, ks, route, gi2);
    CHECK(gi1 == gi2);

    std::vector<std::vector<float>> gw1(subsets, std::vector<float>(g.weight_size())), gw2 = gw1;
    std::vector<std::vector<float>> gb1(subsets, std::vector<float>(static_cast<std::size_t>(g.out_channels))),
        gb2 = gb1;
    RoutedWeightGrads r1, r2;
    for (int k = 0; k < subsets; ++k) {
      r1.weights.emplace_back(gw1[k]);
      r1.biases.emplace_back(gb1[k]);
      r2.weights.emplace_back(gw2[k]);
      r2.biases.emplace_back(gb2[k]);
    }
    serial::routed_conv2d_grad_weight(g, in, go, route, r1);
    parallel::routed_conv2d_grad_weight(g, in, go, route, r2);
    CHECK(gw1 == gw2);
    CHECK(gb1 == gb2);
  }
}

TEST_CASE("thread count is reported") { CHECK(max_threads() >= 1); }
