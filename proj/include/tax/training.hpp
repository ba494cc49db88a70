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

// Three training stages run in order: a plain segmentation model, the
// annotator assigner supervised by the plain model's uncertainty, and the
// routed model whose kernel subsets are updated per annotator sub-batch.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tax/assigner.hpp"
#include "tax/checkpoint.hpp"
#include "tax/config.hpp"
#include "tax/model.hpp"
#include "tax/synth.hpp"

namespace tax {

struct TrainingSet {
  std::vector<Sample> samples;
  int n_annotators = 0;
  int classes = 0;
  int height = 0;
  int width = 0;
};

TrainingSet load_training_set(const std::filesystem::path& data_root, const DatasetManifest& manifest);

struct TrainOptions {
  std::filesystem::path run_dir;  // checkpoints and logs go here
  bool resume = false;
  /// Stop (saving a resumable checkpoint) once this many steps have run in
  /// total; negative runs to completion.
  long long stop_after_steps = -1;
  bool verbose = false;
};

struct TrainResult {
  std::vector<double> epoch_losses;  // epochs run by this call
  long long steps = 0;               // global step count reached
  bool completed = false;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, Stage stage);
std::filesystem::path log_path(const std::filesystem::path& run_dir, Stage stage);

TrainResult train_vanilla(const TrainingSet& data, const UNetConfig& unet, const StageConfig& cfg,
                          const TrainOptions& opts);
TrainResult train_assigner(const TrainingSet& data, const SegModel& vanilla, const AssignerConfig& assigner,
                           const StageConfig& cfg, const TrainOptions& opts);
/// `vanilla` is needed only for pseudo-mask routing.
TrainResult train_tax(const TrainingSet& data, const Assigner& assigner, const SegModel* vanilla,
                      const UNetConfig& unet, const StageConfig& cfg, const TrainOptions& opts);

// Single optimisation steps, exposed for tests. Each returns the batch loss.

double vanilla_step(SegModel& model, OptimState& optim, const std::vector<const Sample*>& batch);

/// Pseudo targets are [groups, h*w] per sample, in batch order.
double assigner_step(Assigner& assigner, OptimState& optim, const std::vector<const Sample*>& batch,
                     const std::vector<const std::vector<float>*>& pseudo, double temperature,
                     std::uint64_t reseed);

/// Groups the batch by annotator (ascending). Each sub-batch runs its own
/// forward/backward with loss scaled by its share of the batch, followed by an
/// SGD step restricted to {annotator k, shared, backbone}.
double tax_step(SegModel& model, OptimState& optim, const std::vector<const Sample*>& batch,
                const std::vector<const Mask*>& routes);

// Model reconstruction from checkpoints.

Checkpoint model_checkpoint(const SegModel& model, Stage stage);
SegModel segmodel_from_checkpoint(const Checkpoint& ckpt);
Checkpoint assigner_checkpoint(const Assigner& assigner);
Assigner assigner_from_checkpoint(const Checkpoint& ckpt);

/// Loads the checkpoint and checks its stage marker.
Checkpoint load_stage_checkpoint(const std::filesystem::path& run_dir, Stage stage);

/// Annotator masks from a frozen assigner, batched inference.
std::vector<Mask> predict_annotator_masks(const Assigner& assigner, const std::vector<Sample>& samples);
/// Uncertainty maps from a frozen plain model, batched inference.
std::vector<Mask> predict_uncertainty(const SegModel& vanilla, const std::vector<Sample>& samples, double q,
                                      UncertaintyMode mode);

}  // namespace tax
