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
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tax/assigner.hpp"
#include "tax/image.hpp"
#include "tax/model.hpp"
#include "tax/synth.hpp"

namespace tax {

/// Pixel rectangle in image coordinates.
struct Box {
  int y0 = 0, x0 = 0, height = 0, width = 0;
  bool operator==(const Box&) const = default;
};

/// A training feature cell that a prototype traces back to.
struct PrototypeTrace {
  int record = -1;     // training record id
  int annotator = 0;   // that record's annotator
  int cell_u = 0, cell_v = 0;
  Box box;             // the cell's receptive patch at input resolution
  double score = 0.0;  // cosine between the cell feature and the prototype
};

/// For every prototype, its best-matching training cells (highest first).
struct PrototypeIndex {
  std::uint64_t bank_hash = 0;
  int groups = 0, per_group = 0;
  int cell_h = 0, cell_w = 0;
  int top = 1;
  std::vector<std::vector<PrototypeTrace>> traces;  // [groups * per_group][<= top]
};

/// Cosine computed exactly as the scorer does (f64, eps-clamped norms).
double cell_cosine(const Tensor& features, int b, int cell, const PrototypeBank& bank, int prototype,
                   float eps = 1e-8f);

/// Scans every training cell; ties resolve to the earlier (record, cell) in
/// scan order, records in the given order and cells row-major.
PrototypeIndex build_prototype_index(const Assigner& assigner, const std::vector<Sample>& train, int top = 1);

nlohmann::json to_json(const PrototypeIndex& index);
PrototypeIndex prototype_index_from_json(const nlohmann::json& j);
void save_prototype_index(const std::filesystem::path& path, const PrototypeIndex& index);
PrototypeIndex load_prototype_index(const std::filesystem::path& path);

/// Throws UsageError when the index was built from a different assigner.
void check_index(const PrototypeIndex& index, const Assigner& assigner);

struct ExplanationRecord {
  std::string image;
  int u = 0, v = 0;          // row, column
  int predicted_class = 0;
  int who = 0;               // annotator index at the pixel, 1..N+1
  int prototype = 0;         // global prototype index
  int prototype_group = 0;
  double score = 0.0;        // cosine of the query cell with that prototype
  Box query_box;
  PrototypeTrace trace;
  std::vector<std::string> overlays;
};

nlohmann::json to_json(const ExplanationRecord& r);

/// Loads a training image by record id, used to crop the traced patch.
using TrainingImageLoader = std::function<RgbImage(int record)>;

/// Explains one pixel. Writes overlays and explanation.json into `out_dir`
/// when it is non-empty.
ExplanationRecord explain(const SegModel& model, const Assigner& assigner, const PrototypeIndex& index,
                          const RgbImage& image, int u, int v, const std::string& image_name = "",
                          const std::filesystem::path& out_dir = {}, const TrainingImageLoader& load_train = {});

/// Crop of `image` inside `box`, enlarged by nearest-neighbour `scale`.
RgbImage crop_patch(const RgbImage& image, const Box& box, int scale);

}  // namespace tax
