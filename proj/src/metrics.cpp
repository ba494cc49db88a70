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
#include "tax/metrics.hpp"

#include <algorithm>

#include "tax/error.hpp"

namespace tax {

PixelCounts::PixelCounts(int classes) : inter_(classes, 0), pred_(classes, 0), gt_(classes, 0) {
  if (classes < 1) throw ValueError("metrics: class count must be positive");
}

void PixelCounts::add(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("metrics: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs target " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  const int k = classes();
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const int p = pred.labels[i], g = gt.labels[i];
    if (p >= k || g >= k) throw ValueError("metrics: label " + std::to_string(std::max(p, g)) + " >= class count");
    ++pred_[p];
    ++gt_[g];
    if (p == g) ++inter_[p];
    const bool pf = p != 0, gf = g != 0;
    fg_pred_ += pf;
    fg_gt_ += gf;
    fg_inter_ += pf && gf;
  }
}

ClassScores iou_scores(const PixelCounts& c) {
  ClassScores s;
  double total = 0.0;
  int present = 0;
  for (int k = 0; k < c.classes(); ++k) {
    const auto uni = c.predicted(k) + c.target(k) - c.intersection(k);
    s.present.push_back(uni > 0);
    s.per_class.push_back(uni > 0 ? static_cast<double>(c.intersection(k)) / static_cast<double>(uni) : 0.0);
    if (uni > 0) {
      total += s.per_class.back();
      ++present;
    }
  }
  s.mean = present ? total / present : 0.0;
  return s;
}

ClassScores dice_scores(const PixelCounts& c) {
  ClassScores s;
  double total = 0.0;
  int present = 0;
  for (int k = 0; k < c.classes(); ++k) {
    const auto denom = c.predicted(k) + c.target(k);
    s.present.push_back(denom > 0);
    s.per_class.push_back(denom > 0 ? 2.0 * static_cast<double>(c.intersection(k)) / static_cast<double>(denom) : 0.0);
    if (denom > 0) {
      total += s.per_class.back();
      ++present;
    }
  }
  s.mean = present ? total / present : 0.0;
  return s;
}

double foreground_dice(const PixelCounts& c) {
  const auto denom = c.fg_predicted() + c.fg_target();
  return denom > 0 ? 2.0 * static_cast<double>(c.fg_intersection()) / static_cast<double>(denom) : 1.0;
}

ClassScores miou(const Mask& pred, const Mask& gt, int classes) {
  PixelCounts c(classes);
  c.add(pred, gt);
  return iou_scores(c);
}

ClassScores dice(const Mask& pred, const Mask& gt, int classes) {
  PixelCounts c(classes);
  c.add(pred, gt);
  return dice_scores(c);
}

MetricReport make_report(const PixelCounts& counts, int samples) {
  return {iou_scores(counts), dice_scores(counts), foreground_dice(counts), samples};
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"per_class_iou", r.iou.per_class}, {"miou", r.iou.mean},
          {"per_class_dice", r.dice.per_class}, {"mdice", r.dice.mean},
          {"foreground_dice", r.foreground_dice}, {"samples", r.samples}};
}

int vote_annotator(const Mask& m, int groups, bool all_pixels) {
  std::vector<std::int64_t> votes(static_cast<std::size_t>(groups) + 1, 0);
  for (auto v : m.labels) {
    if (v < 1 || v > groups) throw ValueError("vote: annotator index " + std::to_string(v) + " outside 1.." + std::to_string(groups));
    ++votes[v];
  }
  const int last = all_pixels || std::all_of(votes.begin() + 1, votes.end() - 1, [](auto n) { return n == 0; })
                       ? groups
                       : groups - 1;
  return static_cast<int>(std::max_element(votes.begin() + 1, votes.begin() + last + 1) - votes.begin());
}

double assignment_accuracy(const std::vector<Mask>& masks, const std::vector<int>& truth, int groups, bool all_pixels) {
  if (masks.empty()) throw ValueError("assignment accuracy: empty split");
  if (masks.size() != truth.size()) throw ShapeError("assignment accuracy: one label per mask required");
  int correct = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) correct += vote_annotator(masks[i], groups, all_pixels) == truth[i];
  return static_cast<double>(correct) / static_cast<double>(masks.size());
}

std::vector<Mask> predict_segmentation(const SegModel& model, const std::vector<Sample>& samples,
                                       const std::vector<Mask>* routes) {
  constexpr std::size_t kChunk = 16;
  if (model.routed() && (!routes || routes->size() != samples.size())) {
    throw ShapeError("predict: routed model needs one route mask per sample");
  }
  NoGradGuard no_grad;
  std::vector<Mask> out;
  for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
    const std::size_t hi = std::min(samples.size(), lo + kChunk);
    std::vector<const RgbImage*> imgs;
    std::vector<const Mask*> r;
    for (std::size_t i = lo; i < hi; ++i) {
      imgs.push_back(&samples[i].image);
      if (model.routed()) r.push_back(&(*routes)[i]);
    }
    const Tensor images = images_to_tensor(imgs);
    const Tensor logits = model.routed() ? model.forward_tax(images, to_label_map(r)) : model.forward_vanilla(images);
    for (auto& m : argmax_masks(logits)) out.push_back(std::move(m));
  }
  return out;
}

std::vector<std::vector<double>> per_tendency_eval(const SegModel& model, const std::vector<Sample>& test) {
  if (!model.routed()) throw Error("per-tendency evaluation needs a routed model");
  if (test.empty()) throw ValueError("per-tendency evaluation: empty split");
  const int n = model.n_annotators();
  for (const auto& s : test) {
    if (static_cast<int>(s.variants.size()) != n) {
      throw ValueError("per-tendency evaluation: record " + std::to_string(s.id) + " lacks the manipulated masks");
    }
  }
  std::vector<std::vector<double>> matrix(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
  for (int k = 1; k <= n; ++k) {
    const std::vector<Mask> routes(test.size(), Mask(test[0].image.height, test[0].image.width, static_cast<std::uint8_t>(k)));
    const auto pred = predict_segmentation(model, test, &routes);
    for (int j = 1; j <= n; ++j) {
      PixelCounts counts(model.config().classes);
      for (std::size_t i = 0; i < test.size(); ++i) counts.add(pred[i], test[i].variants[static_cast<std::size_t>(j - 1)]);
      matrix[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j - 1)] = iou_scores(counts).mean;
    }
  }
  return matrix;
}

double diagonal_margin(const std::vector<std::vector<double>>& m) {
  const std::size_t n = m.size();
  if (n < 2) throw ValueError("diagonal margin needs at least a 2x2 matrix");
  double diag = 0.0, off = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) (i == j ? diag : off) += m[i][j];
  return diag / static_cast<double>(n) - off / static_cast<double>(n * (n - 1));
}

}  // namespace tax
