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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tax/image.hpp"

namespace tax {

// ---------------------------------------------------------------------------
// Scene generation

enum class ShapeKind { kDisc, kRectangle, kPolygon };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);

using Color = std::array<int, 3>;

struct SceneSpec {
  int height = 64;
  int width = 64;
  int classes = 3;  // including background
  int min_shapes = 2;
  int max_shapes = 4;
  std::vector<ShapeKind> kinds{ShapeKind::kDisc, ShapeKind::kRectangle, ShapeKind::kPolygon};
  double min_size = 7.0;   // radius, or half-extent for rectangles
  double max_size = 14.0;
  std::vector<Color> class_colors{{60, 60, 60}, {200, 70, 70}, {70, 180, 90}};
  double noise_sigma = 12.0;
  // Whole-image additive color offset per annotator domain (index 0 is
  // annotator 1). Models a per-annotator acquisition source; zero disables.
  std::vector<Color> domain_tints{{35, 0, -35}, {-35, 35, 0}, {0, -35, 35}, {35, 35, -35}};
  double domain_tint_strength = 1.0;
};

/// Throws ValueError when the spec cannot be satisfied.
void validate(const SceneSpec& spec);

struct Scene {
  RgbImage image;
  Mask mask;
};

/// Deterministic in (seed, spec, domain). domain 0 renders without a tint;
/// domain k >= 1 applies domain_tints[k-1].
///
/// When the drawn shape count reaches classes-1, every foreground class is
/// given at least one shape; later shapes may still occlude earlier ones.
Scene generate_scene(std::uint64_t seed, const SceneSpec& spec, int domain = 0);

// ---------------------------------------------------------------------------
// Morphology on label masks

struct StructuringElement {
  int radius = 1;  // square window of side 2*radius+1 centred on the pixel
};

/// Background pixels within the window of a `cls` pixel become `cls`.
Mask dilate(const Mask& mask, int cls, StructuringElement se);
/// `cls` pixels whose in-bounds window is not entirely `cls` become background.
Mask erode(const Mask& mask, int cls, StructuringElement se);

/// All foreground classes at once. A background pixel reachable from several
/// classes takes the lowest class index; foreground pixels are never changed.
Mask dilate_all(const Mask& mask, StructuringElement se);
Mask erode_all(const Mask& mask, StructuringElement se);

/// Block majority quantization, ties to the smaller label.
Mask simplify(const Mask& mask, int block);

enum class Tendency { kDilated, kEroded, kSimplified, kNone };

std::string to_string(Tendency t);
Tendency parse_tendency(const std::string& name);

/// Tendencies used for `n_annotators` annotators: the first n-1 of
/// dilated, eroded, simplified followed by none. Valid for 1..4.
std::vector<Tendency> tendencies_for(int n_annotators);

struct ManipulationParams {
  int radius = 2;
  int block = 4;
};

Mask manipulate(const Mask& mask, Tendency t, const ManipulationParams& params);
Mask manipulate(const Mask& mask, const std::string& tendency, const ManipulationParams& params);

// ---------------------------------------------------------------------------
// Multi-annotator dataset

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);

struct DatasetSpec {
  SceneSpec scene;
  ManipulationParams manipulation;
  int n_annotators = 4;
  int n_train = 400;
  int n_val = 50;
  int n_test = 50;
};

struct Record {
  int id = 0;
  std::string image;  // paths relative to the dataset root
  std::string mask;   // the annotator's manipulated mask
  std::string orig;
  int annotator = 1;
  std::string tendency;
  // val/test only: one manipulated mask per annotator, index 0 = annotator 1.
  std::vector<std::string> variants;
  friend bool operator==(const Record&, const Record&) = default;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  int n_annotators = 0;
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<std::string> tendencies;  // index 0 = annotator 1
  std::vector<Record> train, val, test;

  const std::vector<Record>& split(Split s) const;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline constexpr const char* kManifestName = "manifest.json";

/// Writes images, masks and manifest.json under `root`.
DatasetManifest build_dataset(const std::filesystem::path& root, std::uint64_t seed,
                              const DatasetSpec& spec);

void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);
/// Parses and validates: annotators in range, unique ids, files present.
DatasetManifest read_manifest(const std::filesystem::path& root);

/// A record loaded into memory.
struct Sample {
  int id = 0;
  RgbImage image;
  Mask mask;
  Mask orig;
  int annotator = 1;
  std::vector<Mask> variants;
};

std::vector<Sample> load_split(const std::filesystem::path& root, const DatasetManifest& manifest,
                               Split split);

}  // namespace tax
