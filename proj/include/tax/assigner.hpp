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

// Annotator assigner: a strided conv encoder and a bank of prototypes grouped
// per annotator (plus one shared group). Each feature cell is scored against
// every group by its best cosine similarity; the argmax group, upsampled to
// pixel resolution, is the annotator mask that routes the segmentation head.

#include <cstdint>
#include <vector>

#include "tax/image.hpp"
#include "tax/model.hpp"
#include "tax/optim.hpp"
#include "tax/tensor.hpp"

namespace tax {

struct EncoderConfig {
  int in_channels = 3;
  std::vector<int> widths{16, 32, 64};  // one conv + 2x pool per entry
  int feature_dim = 64;

  int stride() const { return 1 << static_cast<int>(widths.size()); }
};

class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  /// [B, in, H, W] -> [B, d, H/stride, W/stride]
  Tensor forward(const Tensor& images) const;
  const std::vector<ConvLayer>& layers() const { return layers_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<ConvLayer> layers_;
};

struct AssignerConfig {
  EncoderConfig encoder;
  int n_annotators = 4;
  int prototypes_per_group = 8;

  int groups() const { return n_annotators + 1; }
};

/// Prototypes stored as columns of a [d, groups*Q] tensor; group k (1-based)
/// owns columns [(k-1)*Q, k*Q).
struct PrototypeBank {
  Tensor prototypes;
  int groups = 0;
  int per_group = 0;

  int dim() const { return static_cast<int>(prototypes.dim(0)); }
  int count() const { return groups * per_group; }
  int group_of(int global_index) const { return global_index / per_group + 1; }
  std::vector<float> column(int global_index) const;
};

/// Unit-norm Gaussian columns.
PrototypeBank make_prototype_bank(int dim, int groups, int per_group, Rng& rng);

/// Redraws every column whose norm is below 1e-8. Returns how many were redrawn.
int reseed_degenerate(PrototypeBank& bank, std::uint64_t seed);

struct Scores {
  Tensor soft;                        // [B, groups, h, w], best cosine per group
  std::vector<std::int32_t> winner;   // [B, h, w] global prototype index of the overall argmax
  int batch = 0, height = 0, width = 0;
};

/// soft[b,k,u,v] = max_q cos(features[b,:,u,v], p_k^q). Gradient flows to the
/// maximizing prototype of each (cell, group) only; ties pick the lowest index.
Scores score_prototypes(const Tensor& features, const PrototypeBank& bank, float eps = 1e-8f);

/// Per-cell argmax over groups (ties to the lowest group) upsampled by
/// (rh, rw). `soft` holds one image's scores as [groups, h*w].
Mask hard_mask(std::span<const float> soft, int groups, int h, int w, int rh, int rw);

/// One-hot map (annotator where uncertain, shared group elsewhere) averaged over rh x rw cells.
/// Returns [groups, h*w] values of one image.
std::vector<float> build_pseudo_mask(const Mask& uncertainty, int annotator, int groups, int rh, int rw);

/// Mean over cells of cross-entropy between softmax(soft / temperature) and
/// the pseudo distribution.
Tensor assignment_loss(const Tensor& soft, const Tensor& pseudo, float temperature);

class Assigner {
 public:
  Assigner(const AssignerConfig& cfg, std::uint64_t seed);

  struct Output {
    Scores scores;
    std::vector<Mask> hard;  // per image, full resolution, values 1..groups
    int rh = 0, rw = 0;
  };

  Tensor encode(const Tensor& images) const { return encoder_.forward(images); }
  Scores score(const Tensor& images) const { return score_prototypes(encode(images), bank_); }
  Output assign(const Tensor& images) const;

  const AssignerConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }
  PrototypeBank& bank() { return bank_; }
  const PrototypeBank& bank() const { return bank_; }

  /// A single group tagged assigner holding encoder weights and the bank.
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::vector<Parameter> parameters() const { return groups_[0].params; }

 private:
  AssignerConfig cfg_;
  Encoder encoder_;
  PrototypeBank bank_;
  std::vector<ParamGroup> groups_;
};

/// FNV-1a over encoder weights and prototypes; identifies the assigner a
/// prototype index was built from.
std::uint64_t bank_hash(const Assigner& assigner);

}  // namespace tax
