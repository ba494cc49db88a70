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

// Serial reference kernels against the OpenMP kernels on layer shapes taken
// from the default segmentation network. Args: channels in, channels out,
// spatial size.

#include <benchmark/benchmark.h>

#include <vector>

#include "tax/kernels.hpp"
#include "tax/rng.hpp"

namespace {

using tax::kernels::ConvGeometry;

ConvGeometry geometry(const benchmark::State& state) {
  ConvGeometry g;
  g.batch = 8;
  g.in_channels = static_cast<int>(state.range(0));
  g.out_channels = static_cast<int>(state.range(1));
  g.in_height = g.in_width = static_cast<int>(state.range(2));
  return g;
}

std::vector<float> random(std::size_t n, std::uint64_t seed) {
  tax::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

void set_counters(benchmark::State& state, const ConvGeometry& g) {
  const double macs = static_cast<double>(g.output_size()) * g.in_channels * g.kernel_h * g.kernel_w;
  state.counters["MAC/s"] = benchmark::Counter(macs, benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Fn>
void conv_forward(benchmark::State& state) {
  const auto g = geometry(state);
  const auto in = random(g.input_size(), 1), w = random(g.weight_size(), 2), b = random(g.out_channels, 3);
  std::vector<float> out(g.output_size());
  for (auto _ : state) {
    Fn(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  set_counters(state, g);
}

template <auto Fn>
void conv_grad_input(benchmark::State& state) {
  const auto g = geometry(state);
  const auto go = random(g.output_size(), 1), w = random(g.weight_size(), 2);
  std::vector<float> gi(g.input_size());
  for (auto _ : state) {
    Fn(g, go, w, gi);
    benchmark::DoNotOptimize(gi.data());
  }
  set_counters(state, g);
}

template <auto Fn>
void conv_grad_weight(benchmark::State& state) {
  const auto g = geometry(state);
  const auto in = random(g.input_size(), 1), go = random(g.output_size(), 2);
  std::vector<float> gw(g.weight_size()), gb(static_cast<std::size_t>(g.out_channels));
  for (auto _ : state) {
    Fn(g, in, go, gw, gb);
    benchmark::DoNotOptimize(gw.data());
  }
  set_counters(state, g);
}

struct RoutedFixture {
  ConvGeometry g;
  std::vector<std::vector<float>> w, b;
  tax::kernels::KernelSubsets subsets;
  std::vector<std::int32_t> route;

  RoutedFixture(const benchmark::State& state, int count) : g(geometry(state)) {
    tax::Rng rng(9);
    for (int k = 0; k < count; ++k) {
      w.push_back(random(g.weight_size(), 10 + k));
      b.push_back(random(g.out_channels, 20 + k));
    }
    for (int k = 0; k < count; ++k) {
      subsets.weights.emplace_back(w[k]);
      subsets.biases.emplace_back(b[k]);
    }
    route.resize(static_cast<std::size_t>(g.batch) * g.out_height() * g.out_width());
    for (auto& r : route) r = static_cast<std::int32_t>(rng.uniform_int(1, count));
  }
};

template <auto Fn>
void routed_forward(benchmark::State& state) {
  RoutedFixture f(state, 5);
  const auto in = random(f.g.input_size(), 1);
  std::vector<float> out(f.g.output_size());
  for (auto _ : state) {
    Fn(f.g, in, f.subsets, f.route, out);
    benchmark::DoNotOptimize(out.data());
  }
  set_counters(state, f.g);
}

void layer_shapes(benchmark::internal::Benchmark* b) {
  b->Args({3, 8, 64})->Args({8, 8, 64})->Args({16, 32, 16})->Args({16, 3, 64});
}

}  // namespace

namespace k = tax::kernels;
BENCHMARK(conv_forward<k::serial::conv2d_forward>)->Name("conv_forward/serial")->Apply(layer_shapes);
BENCHMARK(conv_forward<k::parallel::conv2d_forward>)->Name("conv_forward/parallel")->Apply(layer_shapes);
BENCHMARK(conv_grad_input<k::serial::conv2d_grad_input>)->Name("conv_grad_input/serial")->Apply(layer_shapes);
BENCHMARK(conv_grad_input<k::parallel::conv2d_grad_input>)->Name("conv_grad_input/parallel")->Apply(layer_shapes);
BENCHMARK(conv_grad_weight<k::serial::conv2d_grad_weight>)->Name("conv_grad_weight/serial")->Apply(layer_shapes);
BENCHMARK(conv_grad_weight<k::parallel::conv2d_grad_weight>)->Name("conv_grad_weight/parallel")->Apply(layer_shapes);
BENCHMARK(routed_forward<k::serial::routed_conv2d_forward>)->Name("routed_forward/serial")->Args({8, 3, 64});
BENCHMARK(routed_forward<k::parallel::routed_conv2d_forward>)->Name("routed_forward/parallel")->Args({8, 3, 64});

BENCHMARK_MAIN();
