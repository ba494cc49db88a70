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
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tax/assigner.hpp"
#include "tax/model.hpp"
#include "tax/synth.hpp"

namespace tax {

enum class Stage { kVanilla, kAssigner, kTax };
std::string to_string(Stage s);
Stage parse_stage(const std::string& name);

enum class RoutingSource { kPredicted, kPseudo };
std::string to_string(RoutingSource r);
RoutingSource parse_routing(const std::string& name);

struct StageConfig {
  Stage stage = Stage::kVanilla;
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  double uncertainty_q = 0.15;
  UncertaintyMode uncertainty_mode = UncertaintyMode::kEntropyQuantile;
  double temperature = 0.1;
  RoutingSource routing = RoutingSource::kPredicted;
};

void validate(const StageConfig& cfg);

struct EvalConfig {
  bool vote_all_pixels = false;  // majority vote over every cell instead of annotator-specific cells
  int audit_queries = 100;
  int trace_top = 1;             // training patches kept per prototype
};

/// Everything a run needs. Stage seeds are derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 7;
  DatasetSpec data;
  UNetConfig unet;
  AssignerConfig assigner;
  StageConfig vanilla;
  StageConfig assigner_stage;
  StageConfig tax;
  EvalConfig eval;

  RunConfig();
  /// The stage's settings with its derived seed filled in.
  StageConfig stage(Stage s) const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Overlays `patch` onto `base`. Every key of `patch` must exist in the
/// serialized form of `base` with a compatible type; anything else throws
/// UsageError naming the key.
RunConfig merge_config(const RunConfig& base, const nlohmann::json& patch);
/// Applies one "dotted.key=value" override; value is parsed as JSON, falling
/// back to a plain string.
RunConfig apply_override(const RunConfig& base, const std::string& assignment);

/// Flattened (dotted key, default rendered as JSON) pairs for --help.
std::vector<std::pair<std::string, std::string>> describe_keys(const RunConfig& cfg);

nlohmann::json to_json(const UNetConfig& c);
UNetConfig unet_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AssignerConfig& c);
AssignerConfig assigner_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StageConfig& c);
StageConfig stage_from_json(const nlohmann::json& j, Stage stage);

}  // namespace tax
