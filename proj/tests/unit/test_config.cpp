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
#include <doctest.h>

#include <set>

#include "tax/config.hpp"
#include "tax/error.hpp"

using namespace tax;
using nlohmann::json;

TEST_CASE("defaults serialize and parse back unchanged") {
  const RunConfig def;
  const RunConfig back = merge_config(def, to_json(def));
  CHECK(to_json(back) == to_json(def));
  CHECK(def.stage(Stage::kVanilla).epochs == 30);
  CHECK(def.stage(Stage::kAssigner).epochs == 20);
  CHECK(def.stage(Stage::kTax).epochs == 30);
  CHECK(def.unet.classes == def.data.scene.classes);
}

TEST_CASE("unknown keys and wrong types are usage errors naming the key") {
  const RunConfig def;
  try {
    merge_config(def, json{{"train", {{"tax", {{"epoch", 3}}}}}});
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("train.tax.epoch") != std::string::npos);
  }
  CHECK_THROWS_AS(merge_config(def, json{{"seed", "seven"}}), UsageError);
  CHECK_THROWS_AS(merge_config(def, json{{"model", 3}}), UsageError);
  CHECK_THROWS_AS(apply_override(def, "train.tax.epochs"), UsageError);
  CHECK_THROWS_AS(apply_override(def, "train.vanilla.momentum=1.5"), UsageError);
}

TEST_CASE("dotted overrides") {
  RunConfig c = apply_override(RunConfig{}, "train.tax.epochs=5");
  CHECK(c.tax.epochs == 5);
  c = apply_override(c, "train.tax.routing=pseudo");
  CHECK(c.tax.routing == RoutingSource::kPseudo);
  c = apply_override(c, "eval.vote_all_pixels=true");
  CHECK(c.eval.vote_all_pixels);
  CHECK(c.vanilla.epochs == 30);
}

TEST_CASE("stage seeds are derived from the run seed and differ between stages") {
  RunConfig a, b;
  b.seed = a.seed + 1;
  std::set<std::uint64_t> seeds;
  for (auto s : {Stage::kVanilla, Stage::kAssigner, Stage::kTax}) {
    CHECK(a.stage(s).seed == RunConfig(a).stage(s).seed);
    CHECK(a.stage(s).seed != b.stage(s).seed);
    seeds.insert(a.stage(s).seed);
  }
  CHECK(seeds.size() == 3);
}

TEST_CASE("describe_keys lists every leaf with its default") {
  const auto keys = describe_keys(RunConfig{});
  std::set<std::string> names;
  for (const auto& [k, v] : keys) {
    names.insert(k);
    CHECK_FALSE(v.empty());
  }
  for (const char* k : {"seed", "train.vanilla.learning_rate", "train.assigner.temperature", "train.tax.routing",
                        "model.prototypes_per_group", "eval.audit_queries"}) {
    CAPTURE(k);
    CHECK(names.count(k) == 1);
  }
}

TEST_CASE("stage parsing") {
  CHECK(parse_stage("tax") == Stage::kTax);
  CHECK_THROWS_AS(parse_stage("prototype"), UsageError);
  StageConfig s;
  s.epochs = 0;
  CHECK_THROWS_AS(validate(s), ValueError);
}
