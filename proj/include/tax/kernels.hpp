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
#pragma once

// Raw convolution kernels over NCHW f32 buffers.
//
// Two implementations with identical signatures:
//   kernels::serial    naive direct loops, one output element at a time;
//                      the reference the tests compare against.
//   kernels::parallel  OpenMP row-axpy / im2col kernels used by the ops.
//
// Both accumulate in f64 and add terms to every output element in the same
// fixed order, so for conv2d forward, input-gradient and weight-gradient the
// two paths agree bit-for-bit regardless of thread count:
//   forward       bias, then (ci, ky, kx)
//   grad input    (co, ky, kx)
//   grad weight   (b, oy, ox)
//
// Routed convolution selects one of S kernel subsets per output pixel from a
// route map holding 1-based subset indices. Its serial reference evaluates all
// S full convolutions and masks per pixel.

#include <cstdint>
#include <span>
#include <vector>

namespace tax::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int in_height = 1;
  int in_width = 1;
  int out_channels = 1;
  int kernel_h = 3;
  int kernel_w = 3;
  int padding = 1;
  int stride = 1;

  int out_height() const { return (in_height + 2 * padding - kernel_h) / stride + 1; }
  int out_width() const { return (in_width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t input_size() const;
  std::size_t output_size() const;
  std::size_t weight_size() const;
};

// A routed layer's parameters: subsets[k] is [Cout,Cin,kh,kw], biases[k] is [Cout].
struct KernelSubsets {
  std::vector<std::span<const float>> weights;
  std::vector<std::span<const float>> biases;
  int count() const { return static_cast<int>(weights.size()); }
};

struct RoutedWeightGrads {
  std::vector<std::span<float>> weights;
  std::vector<std::span<float>> biases;
};

// Output buffers are overwritten, never accumulated into. An empty bias span
// means no bias; an empty grad_bias span skips the bias gradient.
namespace serial {
void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output);
void conv2d_grad_input(const ConvGeometry& g, std::span<const float> grad_output,
                       std::span<const float> weight, std::span<float> grad_input);
void conv2d_grad_weight(const ConvGeometry& g, std::span<const float> input,
                        std::span<const float> grad_output, std::span<float> grad_weight,
                        std::span<float> grad_bias);
void routed_conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                           const KernelSubsets& subsets, std::span<const std::int32_t> route,
                           std::span<float> output);
void routed_conv2d_grad_input(const ConvGeometry& g, std::span<const float> grad_output,
                              const KernelSubsets& subsets, std::span<const std::int32_t> route,
                              std::span<float> grad_input);
void routed_conv2d_grad_weight(const ConvGeometry& g, std::span<const float> input,
                               std::span<const float> grad_output,
                               std::span<const std::int32_t> route, const RoutedWeightGrads& grads);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output);
void conv2d_grad_input(const ConvGeometry& g, std::span<const float> grad_output,
                       std::span<const float> weight, std::span<float> grad_input);
void conv2d_grad_weight(const ConvGeometry& g, std::span<const float> input,
                        std::span<const float> grad_output, std::span<float> grad_weight,
                        std::span<float> grad_bias);
void routed_conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                           const KernelSubsets& subsets, std::span<const std::int32_t> route,
                           std::span<float> output);
void routed_conv2d_grad_input(const ConvGeometry& g, std::span<const float> grad_output,
                              const KernelSubsets& subsets, std::span<const std::int32_t> route,
                              std::span<float> grad_input);
void routed_conv2d_grad_weight(const ConvGeometry& g, std::span<const float> input,
                               std::span<const float> grad_output,
                               std::span<const std::int32_t> route, const RoutedWeightGrads& grads);
}  // namespace parallel

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace tax::kernels
