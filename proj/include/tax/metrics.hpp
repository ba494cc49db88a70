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
#include <vector>

#include <json.hpp>

#include "tax/assigner.hpp"
#include "tax/image.hpp"
#include "tax/model.hpp"
#include "tax/synth.hpp"

namespace tax {

/// Pixel counts per class, accumulated over any number of mask pairs.
class PixelCounts {
 public:
  explicit PixelCounts(int classes);

  void add(const Mask& pred, const Mask& gt);

  int classes() const { return static_cast<int>(inter_.size()); }
  std::int64_t intersection(int c) const { return inter_[c]; }
  std::int64_t predicted(int c) const { return pred_[c]; }
  std::int64_t target(int c) const { return gt_[c]; }
  std::int64_t fg_intersection() const { return fg_inter_; }
  std::int64_t fg_predicted() const { return fg_pred_; }
  std::int64_t fg_target() const { return fg_gt_; }

 private:
  std::vector<std::int64_t> inter_, pred_, gt_;
  std::int64_t fg_inter_ = 0, fg_pred_ = 0, fg_gt_ = 0;
};

/// Per-class scores; `present[c]` is false for classes excluded from the mean
/// (empty union for IoU, empty in both masks for DICE).
struct ClassScores {
  std::vector<double> per_class;
  std::vector<bool> present;
  double mean = 0.0;
};

ClassScores iou_scores(const PixelCounts& counts);
ClassScores dice_scores(const PixelCounts& counts);
/// DICE of foreground (label != 0) against background; for two classes this
/// is class 1's DICE.
double foreground_dice(const PixelCounts& counts);

ClassScores miou(const Mask& pred, const Mask& gt, int classes);
ClassScores dice(const Mask& pred, const Mask& gt, int classes);

struct MetricReport {
  ClassScores iou;
  ClassScores dice;
  double foreground_dice = 0.0;
  int samples = 0;
};

MetricReport make_report(const PixelCounts& counts, int samples);
nlohmann::json to_json(const MetricReport& r);

/// Modal annotator of an annotator mask. Cells routed to the shared index
/// (groups) are skipped unless every cell is shared or `all_pixels` is set.
/// Ties go to the lowest index.
int vote_annotator(const Mask& annotator_mask, int groups, bool all_pixels = false);

/// Fraction of images whose voted annotator equals the true one.
double assignment_accuracy(const std::vector<Mask>& annotator_masks, const std::vector<int>& true_annotators,
                           int groups, bool all_pixels = false);

/// Entry (k-1, j-1) is the dataset mIoU of predictions made with every pixel
/// routed to subset k, scored against annotator j's manipulated masks.
std::vector<std::vector<double>> per_tendency_eval(const SegModel& model, const std::vector<Sample>& test);

/// mean(diagonal) - mean(off-diagonal) of a square matrix.
double diagonal_margin(const std::vector<std::vector<double>>& m);

/// Predicted class masks, batched inference. Routed models need one route
/// mask per sample; plain models ignore `routes`.
std::vector<Mask> predict_segmentation(const SegModel& model, const std::vector<Sample>& samples,
                                       const std::vector<Mask>* routes = nullptr);

}  // namespace tax
