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

// Differentiable operations on NCHW tensors.

#include <cstdint>
#include <span>
#include <vector>

#include "tax/tensor.hpp"

namespace tax {

/// Integer map [batch, height, width] in row-major order. Used for class
/// targets (0-based) and for routes (1-based kernel subset indices).
struct LabelMap {
  int batch = 1;
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(int b, int h, int w, std::int32_t fill = 0)
      : batch(b), height(h), width(w), values(static_cast<std::size_t>(b) * h * w, fill) {}

  std::int32_t& at(int b, int y, int x) {
    return values[(static_cast<std::size_t>(b) * height + y) * width + x];
  }
  std::int32_t at(int b, int y, int x) const {
    return values[(static_cast<std::size_t>(b) * height + y) * width + x];
  }
};

/// Which convolution kernels the ops dispatch to.
enum class KernelPath {
  kParallel,   // OpenMP kernels (default)
  kReference,  // serial reference kernels; routed conv runs all subsets and masks
};

KernelPath kernel_path();

/// Selects the kernel path for the current thread while alive.
class ScopedKernelPath {
 public:
  explicit ScopedKernelPath(KernelPath path);
  ~ScopedKernelPath();
  ScopedKernelPath(const ScopedKernelPath&) = delete;
  ScopedKernelPath& operator=(const ScopedKernelPath&) = delete;

 private:
  KernelPath previous_;
};

namespace ops {

/// input [B,Cin,H,W], kernel [Cout,Cin,kh,kw], optional bias [Cout].
/// Requires odd kernel sizes and an exact output size.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding,
              int stride = 1);

/// Per-pixel kernel routing: output pixel (b,y,x) is the response of subset
/// route(b,y,x) (1-based). All subsets share [Cout,Cin,3,3]; biases may be
/// empty or one [Cout] tensor per subset.
Tensor routed_conv2d(const Tensor& input, std::span<const Tensor> kernels,
                     std::span<const Tensor> biases, const LabelMap& route, int padding = 1);

Tensor relu(const Tensor& x);
Tensor softmax_channel(const Tensor& x, std::size_t axis = 1);
Tensor log_softmax_channel(const Tensor& x, std::size_t axis = 1);

/// Mean over pixels of -sum_c target_c * log_softmax(logits)_c.
/// target is a per-pixel distribution with the logits' shape [B,K,H,W].
Tensor cross_entropy_map(const Tensor& logits, const Tensor& target);
/// Same with class indices in {0..K-1}, target shape [B,H,W].
Tensor cross_entropy_map(const Tensor& logits, const LabelMap& target);

/// a.b / (max(|a|,eps) * max(|b|,eps)) for two vectors of equal length.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, float eps = 1e-8f);

/// Average over rh x rw cells of the two trailing axes.
Tensor avg_downsample(const Tensor& x, int rh, int rw);
/// Replicates every element of the two trailing axes into an rh x rw block.
Tensor nearest_upsample(const Tensor& x, int rh, int rw);

/// Concatenation along axis 1 of two [B,C,H,W] tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace ops
}  // namespace tax
