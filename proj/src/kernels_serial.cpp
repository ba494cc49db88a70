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

// Reference kernels: one output element at a time, straight from the
// definition. Slow; kept for tests and the debug reference path.

#include <algorithm>
#include <vector>

#include "tax/kernels.hpp"

namespace tax::kernels {

std::size_t ConvGeometry::input_size() const {
  return static_cast<std::size_t>(batch) * in_channels * in_height * in_width;
}
std::size_t ConvGeometry::output_size() const {
  return static_cast<std::size_t>(batch) * out_channels * out_height() * out_width();
}
std::size_t ConvGeometry::weight_size() const {
  return static_cast<std::size_t>(out_channels) * in_channels * kernel_h * kernel_w;
}

namespace serial {

namespace {
std::size_t at4(int a, int b, int c, int d, int nb, int nc, int nd) {
  return ((static_cast<std::size_t>(a) * nb + b) * nc + c) * nd + d;
}
}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output) {
  const int oh = g.out_height(), ow = g.out_width();
  for (int b = 0; b < g.batch; ++b)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : static_cast<double>(bias[co]);
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < g.kernel_h; ++ky)
              for (int kx = 0; kx < g.kernel_w; ++kx) {
                const int iy = oy * g.stride - g.padding + ky;
                const int ix = ox * g.stride - g.padding + kx;
                if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                acc += static_cast<double>(
                           weight[at4(co, ci, ky, kx, g.in_channels, g.kernel_h, g.kernel_w)]) *
                       static_cast<double>(
                           input[at4(b, ci, iy, ix, g.in_channels, g.in_height, g.in_width)]);
              }
          output[at4(b, co, oy, ox, g.out_channels, oh, ow)] = static_cast<float>(acc);
        }
}

void conv2d_grad_input(const ConvGeometry& g, std::span<const float> grad_output,
                       std::span<const float> weight, std::span<float> grad_input) {
  const int oh = g.out_height(), ow = g.out_width();
  for (int b = 0; b < g.batch; ++b)
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int iy = 0; iy < g.in_height; ++iy)
        for (int ix = 0; ix < g.in_width; ++ix) {
          double acc = 0.0;
          for (int co = 0; co < g.out_channels; ++co)
            for (int ky = 0; ky < g.kernel_h; ++ky)
              for (int kx = 0; kx < g.kernel_w; ++kx) {
                const int ny = iy + g.padding - ky;
                const int nx = ix + g.padding - kx;
                if (ny < 0 || nx < 0 || ny % g.stride != 0 || nx % g.stride != 0) continue;
                const int oy = ny / g.stride, ox = nx / g.stride;
                if (oy >= oh || ox >= ow) continue;
                acc += static_cast<double>(
                           weight[at4(co, ci, ky, kx, g.in_channels, g.kernel_h, g.kernel_w)]) *
                       static_cast<double>(grad_output[at4(b, co, oy, ox, g.out_channels, oh, ow)]);
              }
          grad_input[at4(b, ci, iy, ix, g.in_channels, g.in_height, g.in_width)] =
              static_cast<float>(acc);
        }
}

void conv2d_grad_weight(const ConvGeometry& g, std::span<const float> input,
                        std::span<const float> grad_output, std::span<float> grad_weight,
                        std::span<float> grad_bias) {
  const int oh = g.out_height(), ow = g.out_width();
  for (int co = 0; co < g.out_channels; ++co) {
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int ky = 0; ky < g.kernel_h; ++ky)
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          double acc = 0.0;
          for (int b = 0; b < g.batch; ++b)
            for (int oy = 0; oy < oh; ++oy)
              for (int ox = 0; ox < ow; ++ox) {
                const int iy = oy * g.stride - g.padding + ky;
                const int ix = ox * g.stride - g.padding + kx;
                if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                acc += static_cast<double>(grad_output[at4(b, co, oy, ox, g.out_channels, oh, ow)]) *
                       static_cast<double>(
                           input[at4(b, ci, iy, ix, g.in_channels, g.in_height, g.in_width)]);
              }
          grad_weight[at4(co, ci, ky, kx, g.in_channels, g.kernel_h, g.kernel_w)] =
              static_cast<float>(acc);
        }
    if (!grad_bias.empty()) {
      double acc = 0.0;
      for (int b = 0; b < g.batch; ++b)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox)
            acc += static_cast<double>(grad_output[at4(b, co, oy, ox, g.out_channels, oh, ow)]);
      grad_bias[co] = static_cast<float>(acc);
    }
  }
}

namespace {
// grad_output with every pixel not routed to `subset` set to zero.
std::vector<float> masked_grad(const ConvGeometry& g, std::span<const float> grad_output,
                               std::span<const std::int32_t> route, int subset) {
  const std::size_t plane = static_cast<std::size_t>(g.out_height()) * g.out_width();
  std::vector<float> masked(grad_output.begin(), grad_output.end());
  for (int b = 0; b < g.batch; ++b)
    for (int co = 0; co < g.out_channels; ++co)
      for (std::size_t p = 0; p < plane; ++p)
        if (route[b * plane + p] != subset) masked[(b * g.out_channels + co) * plane + p] = 0.0f;
  return masked;
}
}  // namespace

void routed_conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                           const KernelSubsets& subsets, std::span<const std::int32_t> route,
                           std::span<float> output) {
  const std::size_t plane = static_cast<std::size_t>(g.out_height()) * g.out_width();
  std::vector<float> full(g.output_size());
  for (int k = 1; k <= subsets.count(); ++k) {
    const auto bias = subsets.biases.empty() ? std::span<const float>{} : subsets.biases[k - 1];
    conv2d_forward(g, input, subsets.weights[k - 1], bias, full);
    for (int b = 0; b < g.batch; ++b)
      for (int co = 0; co < g.out_channels; ++co)
        for (std::size_t p = 0; p < plane; ++p) {
          if (route[b * plane + p] != k) continue;
          const std::size_t i = (b * g.out_channels + co) * plane + p;
          output[i] = full[i];
        }
  }
}

void routed_conv2d_grad_input(const ConvGeometry& g, std::span<const float> grad_output,
                              const KernelSubsets& subsets, std::span<const std::int32_t> route,
                              std::span<float> grad_input) {
  const int oh = g.out_height(), ow = g.out_width();
  std::vector<double> acc(g.input_size(), 0.0);
  for (int b = 0; b < g.batch; ++b)
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int co = 0; co < g.out_channels; ++co)
        for (int ky = 0; ky < g.kernel_h; ++ky)
          for (int kx = 0; kx < g.kernel_w; ++kx) {
            const std::size_t widx =
                ((static_cast<std::size_t>(co) * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx;
            for (int oy = 0; oy < oh; ++oy)
              for (int ox = 0; ox < ow; ++ox) {
                const int iy = oy * g.stride - g.padding + ky, ix = ox * g.stride - g.padding + kx;
                if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                const std::size_t o = ((static_cast<std::size_t>(b) * g.out_channels + co) * oh + oy) * ow + ox;
                const std::size_t ro = (static_cast<std::size_t>(b) * oh + oy) * ow + ox;
                const float w = subsets.weights[static_cast<std::size_t>(route[ro] - 1)][widx];
                acc[((static_cast<std::size_t>(b) * g.in_channels + ci) * g.in_height + iy) * g.in_width + ix] +=
                    static_cast<double>(w) * grad_output[o];
              }
          }
  std::transform(acc.begin(), acc.end(), grad_input.begin(),
                 [](double v) { return static_cast<float>(v); });
}

void routed_conv2d_grad_weight(const ConvGeometry& g, std::span<const float> input,
                               std::span<const float> grad_output,
                               std::span<const std::int32_t> route, const RoutedWeightGrads& grads) {
  for (std::size_t k = 1; k <= grads.weights.size(); ++k) {
    const auto masked = masked_grad(g, grad_output, route, static_cast<int>(k));
    const auto gb = grads.biases.empty() ? std::span<float>{} : grads.biases[k - 1];
    conv2d_grad_weight(g, input, masked, grads.weights[k - 1], gb);
  }
}

}  // namespace serial
}  // namespace tax::kernels
