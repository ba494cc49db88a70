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

// Binary checkpoint:
//   bytes 0..7    "TAXCKPT1"
//   bytes 8..15   header length L, u64 little-endian
//   bytes 16..    L bytes of UTF-8 JSON: version, stage, config, state and a
//                 tensor table of {name, shape, offset, count}
//   then          f32 little-endian payload; offsets are relative to its start

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tax/optim.hpp"
#include "tax/tensor.hpp"

namespace tax {

inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  std::string stage;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json state = nlohmann::json::object();
  std::vector<NamedArray> tensors;

  const NamedArray* find(const std::string& name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError naming the byte offset of the first problem.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes to a temporary sibling and renames, so a crash never leaves a
/// truncated checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends copies of the parameters' values under "<prefix><name>".
void store_parameters(Checkpoint& ckpt, const std::vector<Parameter>& params, const std::string& prefix = "");

/// Copies stored values into the parameters. Every name and shape is checked
/// before anything is written.
void restore_parameters(const Checkpoint& ckpt, const std::vector<Parameter>& params,
                        const std::string& prefix = "");

/// Momentum buffers are stored as tensors "velocity/<param name>".
void store_optimizer(Checkpoint& ckpt, const OptimState& state);
void restore_optimizer(const Checkpoint& ckpt, OptimState& state);

}  // namespace tax
