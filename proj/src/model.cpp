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
#include "tax/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tax/error.hpp"

namespace tax {

Tensor images_to_tensor(std::span<const RgbImage* const> images) {
  if (images.empty()) throw ValueError("images_to_tensor: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> data(images.size() * 3 * plane);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = *images[b];
    if (img.height != h || img.width != w) throw ShapeError("images_to_tensor: mixed image sizes in batch");
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c)
        data[(b * 3 + c) * plane + p] = static_cast<float>(img.pixels[p * 3 + c]) / 127.5f - 1.0f;
  }
  return Tensor::from({static_cast<std::int64_t>(images.size()), 3, h, w}, std::move(data));
}

Tensor image_to_tensor(const RgbImage& image) {
  const RgbImage* one[] = {&image};
  return images_to_tensor(one);
}

Tensor ConvLayer::forward(const Tensor& x) const {
  Tensor y = ops::conv2d(x, weight, bias, static_cast<int>(weight.dim(2) / 2));
  if (relu) y = ops::relu(y);
  if (pool) y = ops::avg_downsample(y, 2, 2);
  return y;
}

ConvLayer make_conv(const std::string& name, int in_channels, int out_channels, int kernel, Rng& rng,
                    bool relu, bool pool) {
  const int fan_in = in_channels * kernel * kernel;
  const double stddev = std::sqrt((relu ? 2.0 : 1.0) / fan_in);
  std::vector<float> w(static_cast<std::size_t>(out_channels) * fan_in);
  for (auto& v : w) v = static_cast<float>(stddev * rng.normal());
  ConvLayer layer;
  layer.name = name;
  layer.weight = Tensor::from({out_channels, in_channels, kernel, kernel}, std::move(w), true);
  layer.bias = Tensor::zeros({out_channels}, true);
  layer.relu = relu;
  layer.pool = pool;
  return layer;
}

void validate(const UNetConfig& c) {
  if (c.in_channels < 1 || c.base_width < 1 || c.classes < 2 || c.feature_width < 1) {
    throw ValueError("unet: channel counts must be positive and classes >= 2");
  }
  if (c.depth < 1 || c.depth > 6) throw ValueError("unet: depth must be in [1, 6]");
}

UNetBackbone::UNetBackbone(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg);
  Rng rng(seed);
  const int b = cfg.base_width;
  encoder_.push_back(make_conv("backbone.enc0a", cfg.in_channels, b, 3, rng));
  encoder_.push_back(make_conv("backbone.enc0b", b, b, 3, rng));
  for (int l = 1; l < cfg.depth; ++l) {
    encoder_.push_back(make_conv("backbone.enc" + std::to_string(l), b << (l - 1), b << l, 3, rng));
  }
  const int deepest = b << (cfg.depth - 1);
  bottleneck_ = make_conv("backbone.bottleneck", deepest, deepest, 3, rng);
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const int skip = b << l;
    const int in = 2 * skip;  // upsampled path (skip channels at every level) + skip
    const int out = l == 0 ? cfg.feature_width : skip / 2;
    decoder_.push_back(make_conv("backbone.dec" + std::to_string(l), in, out, 3, rng));
  }
}

Tensor UNetBackbone::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels) {
    throw ShapeError("unet: expected [B," + std::to_string(cfg_.in_channels) + ",H,W] input, got " +
                     to_string(images.shape()));
  }
  if (images.dim(2) % cfg_.divisor() != 0 || images.dim(3) % cfg_.divisor() != 0) {
    throw ShapeError("unet: input size " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                     " is not divisible by " + std::to_string(cfg_.divisor()));
  }
  std::vector<Tensor> skips;
  Tensor x = encoder_[1].forward(encoder_[0].forward(images));
  skips.push_back(x);
  for (int l = 1; l < cfg_.depth; ++l) {
    x = encoder_[static_cast<std::size_t>(l + 1)].forward(ops::avg_downsample(x, 2, 2));
    skips.push_back(x);
  }
  x = bottleneck_.forward(ops::avg_downsample(x, 2, 2));
  for (int i = 0; i < cfg_.depth; ++i) {
    const int l = cfg_.depth - 1 - i;
    x = ops::concat_channels(ops::nearest_upsample(x, 2, 2), skips[static_cast<std::size_t>(l)]);
    x = decoder_[static_cast<std::size_t>(i)].forward(x);
  }
  return x;
}

std::vector<Parameter> UNetBackbone::parameters() const {
  std::vector<Parameter> out;
  auto add = [&](const ConvLayer& l) {
    out.push_back({l.name + ".weight", l.weight});
    out.push_back({l.name + ".bias", l.bias});
  };
  for (const auto& l : encoder_) add(l);
  add(bottleneck_);
  for (const auto& l : decoder_) add(l);
  return out;
}

SegModel::SegModel(const UNetConfig& cfg, int n_annotators, std::uint64_t seed)
    : n_annotators_(n_annotators),
      backbone_(cfg, seed) {
  if (n_annotators < 0 || n_annotators > 254) throw ValueError("segmodel: n_annotators out of range");
  // Every subset starts from the same draw, so specialization comes from training alone.
  Rng rng(mix_seed(seed) ^ 0x6b65726e656c73ULL);
  const ConvLayer head = make_conv("head", cfg.feature_width, cfg.classes, 3, rng, false);
  const int subsets = routed() ? n_annotators + 1 : 1;
  for (int k = 0; k < subsets; ++k) {
    kernels_.weights.push_back(Tensor::from(head.weight.shape(),
                                            std::vector<float>(head.weight.data().begin(), head.weight.data().end()), true));
    kernels_.biases.push_back(Tensor::zeros({cfg.classes}, true));
  }
  build_groups();
}

void SegModel::build_groups() {
  groups_.clear();
  ParamGroup backbone{"backbone", ParamTag::backbone(), backbone_.parameters()};
  if (!routed()) {
    backbone.params.push_back({"head.weight", kernels_.weights[0]});
    backbone.params.push_back({"head.bias", kernels_.biases[0]});
    groups_.push_back(std::move(backbone));
    return;
  }
  groups_.push_back(std::move(backbone));
  for (int k = 1; k <= kernels_.size(); ++k) {
    const bool shared = k == kernels_.size();
    const std::string name = shared ? "kernel.shared" : "kernel." + std::to_string(k);
    groups_.push_back({name, shared ? ParamTag::shared() : ParamTag::annotator(k),
                       {{name + ".weight", kernels_.weights[static_cast<std::size_t>(k - 1)]},
                        {name + ".bias", kernels_.biases[static_cast<std::size_t>(k - 1)]}}});
  }
}

std::vector<Parameter> SegModel::parameters() const {
  std::vector<Parameter> out;
  for (const auto& g : groups_) out.insert(out.end(), g.params.begin(), g.params.end());
  return out;
}

Tensor SegModel::features(const Tensor& images) const { return backbone_.forward(images); }

Tensor SegModel::forward_vanilla(const Tensor& images) const {
  if (routed()) throw Error("segmodel: forward_vanilla on a routed model; use forward_tax or forward_subset");
  return ops::conv2d(features(images), kernels_.weights[0], kernels_.biases[0], 1);
}

Tensor SegModel::forward_tax(const Tensor& images, const LabelMap& route) const {
  if (!routed()) throw Error("segmodel: forward_tax on a plain model");
  return ops::routed_conv2d(features(images), kernels_.weights, kernels_.biases, route, 1);
}

Tensor SegModel::forward_subset(const Tensor& images, int k) const {
  if (k < 1 || k > kernels_.size()) {
    throw ValueError("segmodel: subset " + std::to_string(k) + " outside 1.." + std::to_string(kernels_.size()));
  }
  const auto i = static_cast<std::size_t>(k - 1);
  return ops::conv2d(features(images), kernels_.weights[i], kernels_.biases[i], 1);
}

LabelMap to_label_map(std::span<const Mask* const> masks) {
  if (masks.empty()) throw ValueError("to_label_map: empty batch");
  const int h = masks[0]->height, w = masks[0]->width;
  LabelMap out(static_cast<int>(masks.size()), h, w);
  for (std::size_t b = 0; b < masks.size(); ++b) {
    if (masks[b]->height != h || masks[b]->width != w) throw ShapeError("to_label_map: mixed mask sizes");
    std::copy(masks[b]->labels.begin(), masks[b]->labels.end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(b * masks[b]->labels.size()));
  }
  return out;
}

std::string to_string(UncertaintyMode m) {
  return m == UncertaintyMode::kEntropyQuantile ? "entropy" : "boundary";
}

UncertaintyMode parse_uncertainty_mode(const std::string& name) {
  if (name == "entropy") return UncertaintyMode::kEntropyQuantile;
  if (name == "boundary") return UncertaintyMode::kBoundaryBand;
  throw ValueError("unknown uncertainty mode '" + name + "' (expected entropy or boundary)");
}

std::vector<double> pixel_entropy(std::span<const float> logits, int classes, int pixels) {
  std::vector<double> h(static_cast<std::size_t>(pixels));
  std::vector<double> z(static_cast<std::size_t>(classes));
  for (int p = 0; p < pixels; ++p) {
    double m = -INFINITY;
    for (int c = 0; c < classes; ++c) {
      z[c] = logits[static_cast<std::size_t>(c) * pixels + p];
      m = std::max(m, z[c]);
    }
    double s = 0.0;
    for (auto& v : z) s += std::exp(v - m);
    const double log_s = std::log(s);
    double e = 0.0;
    for (auto v : z) {
      const double lp = v - m - log_s;
      e -= std::exp(lp) * lp;
    }
    h[static_cast<std::size_t>(p)] = e;
  }
  return h;
}

Mask uncertainty_from_logits(std::span<const float> logits, int classes, int height, int width, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw ValueError("uncertainty: q must lie in [0, 1]");
  const int pixels = height * width;
  const auto entropy = pixel_entropy(logits, classes, pixels);
  const auto count = static_cast<std::size_t>(std::ceil(q * pixels));
  std::vector<int> order(static_cast<std::size_t>(pixels));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return entropy[a] > entropy[b]; });
  Mask u(height, width, 0);
  for (std::size_t i = 0; i < count; ++i) u.labels[static_cast<std::size_t>(order[i])] = 1;
  return u;
}

namespace {
Mask argmax_plane(std::span<const float> logits, int classes, int height, int width) {
  const int pixels = height * width;
  Mask m(height, width);
  for (int p = 0; p < pixels; ++p) {
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (logits[static_cast<std::size_t>(c) * pixels + p] > logits[static_cast<std::size_t>(best) * pixels + p]) best = c;
    }
    m.labels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
  }
  return m;
}
}  // namespace

Mask boundary_band_from_logits(std::span<const float> logits, int classes, int height, int width) {
  const Mask pred = argmax_plane(logits, classes, height, width);
  Mask u(height, width, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto c = pred.at(y, x);
      for (int yy = std::max(0, y - 1); yy <= std::min(height - 1, y + 1); ++yy)
        for (int xx = std::max(0, x - 1); xx <= std::min(width - 1, x + 1); ++xx)
          if (pred.at(yy, xx) != c) u.at(y, x) = 1;
    }
  return u;
}

Mask uncertainty_mask(const SegModel& vanilla, const RgbImage& image, double q, UncertaintyMode mode) {
  NoGradGuard no_grad;
  const Tensor logits = vanilla.forward_vanilla(image_to_tensor(image));
  const int k = vanilla.config().classes;
  if (mode == UncertaintyMode::kBoundaryBand) return boundary_band_from_logits(logits.data(), k, image.height, image.width);
  return uncertainty_from_logits(logits.data(), k, image.height, image.width, q);
}

std::vector<Mask> argmax_masks(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_masks: expected [B,K,H,W], got " + to_string(logits.shape()));
  const int b = static_cast<int>(logits.dim(0)), k = static_cast<int>(logits.dim(1));
  const int h = static_cast<int>(logits.dim(2)), w = static_cast<int>(logits.dim(3));
  const std::size_t per = static_cast<std::size_t>(k) * h * w;
  std::vector<Mask> out;
  for (int i = 0; i < b; ++i) out.push_back(argmax_plane(logits.data().subspan(i * per, per), k, h, w));
  return out;
}

}  // namespace tax
