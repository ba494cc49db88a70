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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tax/image.hpp"
#include "tax/ops.hpp"
#include "tax/optim.hpp"
#include "tax/rng.hpp"
#include "tax/tensor.hpp"

namespace tax {

/// Maps 8-bit RGB to [-1, 1] floats, batched as [B, 3, H, W].
Tensor images_to_tensor(std::span<const RgbImage* const> images);
Tensor image_to_tensor(const RgbImage& image);

/// A 3x3 or similar conv with optional trailing ReLU and 2x average pool.
struct ConvLayer {
  std::string name;
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout]
  bool relu = true;
  bool pool = false;  // 2x2 average pool after the activation

  Tensor forward(const Tensor& x) const;
};

/// Kaiming-normal weights, zero bias.
ConvLayer make_conv(const std::string& name, int in_channels, int out_channels, int kernel, Rng& rng,
                    bool relu = true, bool pool = false);

struct UNetConfig {
  int in_channels = 3;
  int base_width = 8;
  int depth = 3;
  int classes = 3;
  int feature_width = 8;  // channels entering the final 3x3 layer

  int divisor() const { return 1 << depth; }
};

void validate(const UNetConfig& cfg);

/// Small U-Net: two convs at full resolution, one per lower level, a
/// bottleneck, then upsample + skip concat + conv on the way back up.
class UNetBackbone {
 public:
  UNetBackbone(const UNetConfig& cfg, std::uint64_t seed);

  /// [B, in, H, W] -> [B, feature_width, H, W]
  Tensor forward(const Tensor& images) const;
  std::vector<Parameter> parameters() const;
  const UNetConfig& config() const { return cfg_; }

 private:
  UNetConfig cfg_;
  std::vector<ConvLayer> encoder_;  // full-res pair first, then one per level
  ConvLayer bottleneck_;
  std::vector<ConvLayer> decoder_;  // deepest first
};

/// N+1 kernel subsets of the final 3x3 layer; subset N+1 is shared.
struct KernelSet {
  std::vector<Tensor> weights;  // each [K, D, 3, 3]
  std::vector<Tensor> biases;   // each [K]

  int size() const { return static_cast<int>(weights.size()); }
};

/// Segmentation network. With n_annotators == 0 it is a plain network with a
/// single head (the vanilla model); otherwise the head is a KernelSet of
/// n_annotators + 1 subsets routed per pixel.
class SegModel {
 public:
  SegModel(const UNetConfig& cfg, int n_annotators, std::uint64_t seed);

  bool routed() const { return n_annotators_ > 0; }
  int n_annotators() const { return n_annotators_; }
  const UNetConfig& config() const { return backbone_.config(); }

  Tensor features(const Tensor& images) const;

  /// Logits [B, K, H, W] through the single head. Plain models only.
  Tensor forward_vanilla(const Tensor& images) const;
  /// Logits with subset route[b,y,x] (1-based) at every pixel. Routed models only.
  Tensor forward_tax(const Tensor& images, const LabelMap& route) const;
  /// Logits using subset k everywhere through a plain conv.
  Tensor forward_subset(const Tensor& images, int k) const;

  /// Groups: "backbone" (tag backbone), and for routed models one group per
  /// subset tagged annotator(k), the last tagged shared. Plain models keep
  /// their head in the backbone group.
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::vector<Parameter> parameters() const;

  KernelSet& kernels() { return kernels_; }
  const KernelSet& kernels() const { return kernels_; }

 private:
  void build_groups();

  int n_annotators_;
  UNetBackbone backbone_;
  KernelSet kernels_;  // one subset for plain models
  std::vector<ParamGroup> groups_;
};

/// Stacks equally sized masks into a [B, H, W] LabelMap.
LabelMap to_label_map(std::span<const Mask* const> masks);

enum class UncertaintyMode { kEntropyQuantile, kBoundaryBand };

std::string to_string(UncertaintyMode m);
UncertaintyMode parse_uncertainty_mode(const std::string& name);

/// Per-pixel predictive entropy of softmax over K channels of one image's
/// logits laid out [K, H*W].
std::vector<double> pixel_entropy(std::span<const float> logits, int classes, int pixels);

/// U = 1 on exactly ceil(q*H*W) highest-entropy pixels, ties in row-major order.
Mask uncertainty_from_logits(std::span<const float> logits, int classes, int height, int width, double q);

/// Boundary band of the argmax prediction: pixels whose 3x3 neighbourhood
/// holds more than one predicted label.
Mask boundary_band_from_logits(std::span<const float> logits, int classes, int height, int width);

Mask uncertainty_mask(const SegModel& vanilla, const RgbImage& image, double q,
                      UncertaintyMode mode = UncertaintyMode::kEntropyQuantile);

/// argmax over channels of [B, K, H, W] logits, one mask per image.
std::vector<Mask> argmax_masks(const Tensor& logits);

}  // namespace tax
