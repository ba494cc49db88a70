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

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tax/tensor.hpp"

namespace tax {

/// Ownership tag of a parameter group. Annotator k in {1..N} owns kernel
/// subset k; `shared` owns subset N+1; `backbone` owns everything else of a
/// segmentation model; `assigner` owns encoder and prototype bank.
class ParamTag {
 public:
  enum class Kind : std::uint8_t { kAnnotator, kShared, kBackbone, kAssigner };

  static ParamTag annotator(int k);
  static ParamTag shared() { return ParamTag(Kind::kShared, 0); }
  static ParamTag backbone() { return ParamTag(Kind::kBackbone, 0); }
  static ParamTag assigner() { return ParamTag(Kind::kAssigner, 0); }

  Kind kind() const { return kind_; }
  int annotator_index() const { return index_; }
  std::string str() const;
  static ParamTag parse(const std::string& s);

  auto operator<=>(const ParamTag&) const = default;

 private:
  ParamTag(Kind kind, int index) : kind_(kind), index_(index) {}
  Kind kind_;
  int index_;
};

struct Parameter {
  std::string name;
  Tensor tensor;
};

struct ParamGroup {
  std::string name;
  ParamTag tag;
  std::vector<Parameter> params;
};

/// Momentum SGD state; velocity buffers are keyed by parameter name.
struct OptimState {
  float learning_rate = 0.05f;
  float momentum = 0.0f;
  std::map<std::string, std::vector<float>> velocity;

  OptimState() = default;
  OptimState(float lr, float momentum, const std::vector<ParamGroup>& groups);
};

/// theta <- theta - lr * v with v <- momentum * v + grad, for groups whose tag
/// is active. Inactive groups are left untouched; grads of all groups are
/// cleared afterwards. Throws if an active parameter has no grad.
void sgd_step(const std::vector<ParamGroup>& groups, OptimState& state,
              const std::set<ParamTag>& active_tags);

void zero_grads(const std::vector<ParamGroup>& groups);

/// FNV-1a over the raw bytes of every parameter in a group.
std::uint64_t checksum(const ParamGroup& group);

}  // namespace tax
