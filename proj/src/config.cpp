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
#include "tax/config.hpp"

#include "tax/error.hpp"
#include "tax/rng.hpp"

namespace tax {

using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kVanilla: return "vanilla";
    case Stage::kAssigner: return "assigner";
    case Stage::kTax: return "tax";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  if (name == "vanilla") return Stage::kVanilla;
  if (name == "assigner") return Stage::kAssigner;
  if (name == "tax") return Stage::kTax;
  throw UsageError("unknown stage '" + name + "' (expected vanilla, assigner or tax)");
}

std::string to_string(RoutingSource r) { return r == RoutingSource::kPredicted ? "predicted" : "pseudo"; }

RoutingSource parse_routing(const std::string& name) {
  if (name == "predicted") return RoutingSource::kPredicted;
  if (name == "pseudo") return RoutingSource::kPseudo;
  throw UsageError("unknown routing source '" + name + "' (expected predicted or pseudo)");
}

void validate(const StageConfig& c) {
  const std::string s = to_string(c.stage);
  if (c.epochs < 1) throw ValueError(s + ": epochs must be positive");
  if (c.batch_size < 1) throw ValueError(s + ": batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw ValueError(s + ": learning_rate must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ValueError(s + ": momentum must lie in [0, 1)");
  if (!(c.uncertainty_q >= 0.0 && c.uncertainty_q <= 1.0)) throw ValueError(s + ": uncertainty_q must lie in [0, 1]");
  if (!(c.temperature > 0.0)) throw ValueError(s + ": temperature must be positive");
}

RunConfig::RunConfig() {
  vanilla.stage = Stage::kVanilla;
  vanilla.epochs = 30;
  vanilla.learning_rate = 0.02;
  assigner_stage.stage = Stage::kAssigner;
  assigner_stage.epochs = 20;
  assigner_stage.learning_rate = 0.01;
  tax.stage = Stage::kTax;
  tax.epochs = 30;
  tax.learning_rate = 0.02;
  unet.classes = data.scene.classes;
  assigner.n_annotators = data.n_annotators;
}

StageConfig RunConfig::stage(Stage s) const {
  StageConfig c = s == Stage::kVanilla ? vanilla : s == Stage::kAssigner ? assigner_stage : tax;
  c.stage = s;
  c.seed = mix_seed(seed * 4 + static_cast<std::uint64_t>(s) + 1);
  return c;
}

json to_json(const UNetConfig& c) {
  return {{"base_width", c.base_width}, {"depth", c.depth}, {"feature_width", c.feature_width},
          {"classes", c.classes}, {"in_channels", c.in_channels}};
}

UNetConfig unet_from_json(const json& j) {
  UNetConfig c;
  c.base_width = j.at("base_width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.feature_width = j.at("feature_width").get<int>();
  c.classes = j.at("classes").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  validate(c);
  return c;
}

json to_json(const AssignerConfig& c) {
  return {{"widths", c.encoder.widths}, {"feature_dim", c.encoder.feature_dim},
          {"in_channels", c.encoder.in_channels}, {"prototypes_per_group", c.prototypes_per_group},
          {"n_annotators", c.n_annotators}};
}

AssignerConfig assigner_from_json(const json& j) {
  AssignerConfig c;
  c.encoder.widths = j.at("widths").get<std::vector<int>>();
  c.encoder.feature_dim = j.at("feature_dim").get<int>();
  c.encoder.in_channels = j.at("in_channels").get<int>();
  c.prototypes_per_group = j.at("prototypes_per_group").get<int>();
  c.n_annotators = j.at("n_annotators").get<int>();
  if (c.prototypes_per_group < 1 || c.encoder.widths.empty() || c.encoder.feature_dim < 1) {
    throw ValueError("assigner: invalid configuration");
  }
  return c;
}

json to_json(const StageConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"uncertainty_q", c.uncertainty_q},
          {"uncertainty_mode", to_string(c.uncertainty_mode)},
          {"temperature", c.temperature},
          {"routing", to_string(c.routing)}};
}

StageConfig stage_from_json(const json& j, Stage stage) {
  StageConfig c;
  c.stage = stage;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.uncertainty_q = j.at("uncertainty_q").get<double>();
  c.uncertainty_mode = parse_uncertainty_mode(j.at("uncertainty_mode").get<std::string>());
  c.temperature = j.at("temperature").get<double>();
  c.routing = parse_routing(j.at("routing").get<std::string>());
  validate(c);
  return c;
}

namespace {

json data_to_json(const DatasetSpec& d) {
  std::vector<std::string> kinds;
  for (auto k : d.scene.kinds) kinds.push_back(to_string(k));
  return {{"height", d.scene.height},
          {"width", d.scene.width},
          {"classes", d.scene.classes},
          {"min_shapes", d.scene.min_shapes},
          {"max_shapes", d.scene.max_shapes},
          {"shape_kinds", kinds},
          {"min_size", d.scene.min_size},
          {"max_size", d.scene.max_size},
          {"class_colors", d.scene.class_colors},
          {"noise_sigma", d.scene.noise_sigma},
          {"domain_tints", d.scene.domain_tints},
          {"domain_tint_strength", d.scene.domain_tint_strength},
          {"morph_radius", d.manipulation.radius},
          {"simplify_block", d.manipulation.block},
          {"n_annotators", d.n_annotators},
          {"n_train", d.n_train},
          {"n_val", d.n_val},
          {"n_test", d.n_test}};
}

DatasetSpec data_from_json(const json& j) {
  DatasetSpec d;
  d.scene.height = j.at("height").get<int>();
  d.scene.width = j.at("width").get<int>();
  d.scene.classes = j.at("classes").get<int>();
  d.scene.min_shapes = j.at("min_shapes").get<int>();
  d.scene.max_shapes = j.at("max_shapes").get<int>();
  d.scene.kinds.clear();
  for (const auto& k : j.at("shape_kinds")) d.scene.kinds.push_back(parse_shape_kind(k.get<std::string>()));
  d.scene.min_size = j.at("min_size").get<double>();
  d.scene.max_size = j.at("max_size").get<double>();
  d.scene.class_colors = j.at("class_colors").get<std::vector<Color>>();
  d.scene.noise_sigma = j.at("noise_sigma").get<double>();
  d.scene.domain_tints = j.at("domain_tints").get<std::vector<Color>>();
  d.scene.domain_tint_strength = j.at("domain_tint_strength").get<double>();
  d.manipulation.radius = j.at("morph_radius").get<int>();
  d.manipulation.block = j.at("simplify_block").get<int>();
  d.n_annotators = j.at("n_annotators").get<int>();
  d.n_train = j.at("n_train").get<int>();
  d.n_val = j.at("n_val").get<int>();
  d.n_test = j.at("n_test").get<int>();
  return d;
}

json stage_keys(const StageConfig& c) { return to_json(c); }

// Checks that every key of `patch` exists in `base` with a compatible type,
// then overlays it.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw UsageError("config: '" + (where.empty() ? "<root>" : where) + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw UsageError("config: unknown key '" + key + "'");
    json& target = base[it.key()];
    const json& value = it.value();
    if (target.is_object()) {
      overlay(target, value, key);
      continue;
    }
    const bool ok = (target.is_number_integer() && value.is_number_integer()) ||
                    (target.is_number_float() && value.is_number()) ||
                    (target.is_string() && value.is_string()) || (target.is_boolean() && value.is_boolean()) ||
                    (target.is_array() && value.is_array());
    if (!ok) {
      throw UsageError("config: key '" + key + "' expects a value like " + target.dump() + ", got " + value.dump());
    }
    if (target.is_number_integer() && target.is_number_unsigned() && value.is_number_integer() &&
        !value.is_number_unsigned() && value.get<std::int64_t>() < 0) {
      throw UsageError("config: key '" + key + "' must be non-negative");
    }
    target = value.is_number() && target.is_number_float() ? json(value.get<double>()) : value;
  }
}

RunConfig from_json(const json& j) {
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.data = data_from_json(j.at("data"));
    const auto& m = j.at("model");
    c.unet.base_width = m.at("unet_base_width").get<int>();
    c.unet.depth = m.at("unet_depth").get<int>();
    c.unet.feature_width = m.at("feature_width").get<int>();
    c.unet.classes = c.data.scene.classes;
    c.assigner.encoder.widths = m.at("encoder_widths").get<std::vector<int>>();
    c.assigner.encoder.feature_dim = m.at("prototype_dim").get<int>();
    c.assigner.prototypes_per_group = m.at("prototypes_per_group").get<int>();
    c.assigner.n_annotators = c.data.n_annotators;
    const auto& t = j.at("train");
    c.vanilla = stage_from_json(t.at("vanilla"), Stage::kVanilla);
    c.assigner_stage = stage_from_json(t.at("assigner"), Stage::kAssigner);
    c.tax = stage_from_json(t.at("tax"), Stage::kTax);
    const auto& e = j.at("eval");
    c.eval.vote_all_pixels = e.at("vote_all_pixels").get<bool>();
    c.eval.audit_queries = e.at("audit_queries").get<int>();
    c.eval.trace_top = e.at("trace_top").get<int>();
  } catch (const json::exception& ex) {
    throw UsageError(std::string("config: ") + ex.what());
  } catch (const ValueError& ex) {
    throw UsageError(std::string("config: ") + ex.what());
  }
  try {
    validate(c.data.scene);
    validate(c.unet);
    tendencies_for(c.data.n_annotators);
  } catch (const ValueError& ex) {
    throw UsageError(std::string("config: ") + ex.what());
  }
  if (c.eval.trace_top < 1 || c.eval.audit_queries < 1) throw UsageError("config: eval counts must be positive");
  if (c.assigner.prototypes_per_group < 1 || c.assigner.encoder.feature_dim < 1 || c.assigner.encoder.widths.empty()) {
    throw UsageError("config: invalid assigner model settings");
  }
  return c;
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object()) {
      flatten(it.value(), key, out);
    } else {
      out.emplace_back(key, it.value().dump());
    }
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"data", data_to_json(c.data)},
          {"model",
           {{"unet_base_width", c.unet.base_width},
            {"unet_depth", c.unet.depth},
            {"feature_width", c.unet.feature_width},
            {"encoder_widths", c.assigner.encoder.widths},
            {"prototype_dim", c.assigner.encoder.feature_dim},
            {"prototypes_per_group", c.assigner.prototypes_per_group}}},
          {"train",
           {{"vanilla", stage_keys(c.vanilla)}, {"assigner", stage_keys(c.assigner_stage)}, {"tax", stage_keys(c.tax)}}},
          {"eval",
           {{"vote_all_pixels", c.eval.vote_all_pixels},
            {"audit_queries", c.eval.audit_queries},
            {"trace_top", c.eval.trace_top}}}};
}

RunConfig merge_config(const RunConfig& base, const json& patch) {
  json merged = to_json(base);
  overlay(merged, patch, "");
  return from_json(merged);
}

RunConfig apply_override(const RunConfig& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return merge_config(base, patch);
}

std::vector<std::pair<std::string, std::string>> describe_keys(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  flatten(to_json(cfg), "", out);
  return out;
}

}  // namespace tax
