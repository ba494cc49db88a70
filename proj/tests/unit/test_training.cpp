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

#include "fixtures.hpp"
#include "tax/error.hpp"
#include "tax/training.hpp"

using namespace tax;
namespace fs = std::filesystem;

namespace {

struct TinyData {
  testing::TempDir dir{"training-data"};
  DatasetManifest manifest;
  TrainingSet set;

  explicit TinyData(int n_annotators = 4, int n_train = 16) {
    manifest = build_dataset(dir.path(), 21, testing::tiny_dataset_spec(n_annotators, n_train, 4));
    set = load_training_set(dir.path(), manifest);
  }
};

std::vector<const Sample*> batch_of_annotator(const TrainingSet& t, int a, std::size_t n) {
  std::vector<const Sample*> out;
  for (const auto& s : t.samples)
    if (s.annotator == a && out.size() < n) out.push_back(&s);
  return out;
}

}  // namespace

TEST_CASE("a sub-batch step touches only its subset, the shared subset and the backbone") {
  TinyData data(3, 12);
  SegModel model(testing::tiny_unet(), 3, 5);
  OptimState opt(0.02f, 0.9f, model.groups());
  const auto batch = batch_of_annotator(data.set, 2, 4);
  REQUIRE(batch.size() == 4);
  // Route every pixel to the sample's annotator except a shared border.
  std::vector<Mask> routes;
  for (const auto* s : batch) {
    Mask r(s->image.height, s->image.width, 4);
    for (int y = 2; y < r.height - 2; ++y)
      for (int x = 2; x < r.width - 2; ++x) r.at(y, x) = 2;
    routes.push_back(r);
  }
  std::vector<const Mask*> rp;
  for (const auto& r : routes) rp.push_back(&r);

  std::vector<std::uint64_t> before;
  for (const auto& g : model.groups()) before.push_back(checksum(g));
  REQUIRE(model.groups().size() == 5);  // backbone, subsets 1..3, shared
  tax_step(model, opt, batch, rp);
  CHECK(checksum(model.groups()[0]) != before[0]);
  CHECK(checksum(model.groups()[1]) == before[1]);
  CHECK(checksum(model.groups()[2]) != before[2]);
  CHECK(checksum(model.groups()[3]) == before[3]);
  CHECK(checksum(model.groups()[4]) != before[4]);
}

TEST_CASE("mixed batches update every annotator's subset") {
  TinyData data(4, 8);
  SegModel model(testing::tiny_unet(), 4, 6);
  OptimState opt(0.02f, 0.9f, model.groups());
  std::vector<const Sample*> batch;
  std::vector<Mask> routes;
  for (const auto& s : data.set.samples) {
    batch.push_back(&s);
    routes.emplace_back(s.image.height, s.image.width, static_cast<std::uint8_t>(s.annotator));
  }
  std::vector<const Mask*> rp;
  for (const auto& r : routes) rp.push_back(&r);
  std::vector<std::uint64_t> before;
  for (const auto& g : model.groups()) before.push_back(checksum(g));
  const double loss = tax_step(model, opt, batch, rp);
  CHECK(std::isfinite(loss));
  for (int k = 1; k <= 4; ++k) CHECK(checksum(model.groups()[static_cast<std::size_t>(k)]) != before[k]);
  // Nothing was routed to the shared subset.
  CHECK(checksum(model.groups()[5]) == before[5]);
  CHECK_THROWS_AS(tax_step(model, opt, batch, {}), ShapeError);
}

TEST_CASE("vanilla runs are deterministic and write {stage, epoch, loss} logs") {
  TinyData data;
  testing::TempDir a("train-a"), b("train-b");
  const auto cfg = testing::tiny_stage(Stage::kVanilla, 2);
  const auto ra = train_vanilla(data.set, testing::tiny_unet(), cfg, {a.path()});
  const auto rb = train_vanilla(data.set, testing::tiny_unet(), cfg, {b.path()});
  CHECK(ra.completed);
  CHECK(ra.steps == 8);
  CHECK(ra.epoch_losses == rb.epoch_losses);
  CHECK(read_file(checkpoint_path(a.path(), Stage::kVanilla)) == read_file(checkpoint_path(b.path(), Stage::kVanilla)));

  std::istringstream log(read_file(log_path(a.path(), Stage::kVanilla)));
  std::string line;
  int epoch = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    ++epoch;
    CHECK(j.size() == 3);
    CHECK(j.at("stage") == "vanilla");
    CHECK(j.at("epoch") == epoch);
    CHECK(j.at("loss").get<double>() == doctest::Approx(ra.epoch_losses[static_cast<std::size_t>(epoch - 1)]));
  }
  CHECK(epoch == 2);
}

TEST_CASE("an interrupted and resumed run matches the unbroken run byte for byte") {
  TinyData data;
  const auto cfg = testing::tiny_stage(Stage::kVanilla, 3);
  testing::TempDir whole("train-whole"), split("train-split");
  train_vanilla(data.set, testing::tiny_unet(), cfg, {whole.path()});

  TrainOptions first{split.path()};
  first.stop_after_steps = 6;  // mid second epoch
  const auto r1 = train_vanilla(data.set, testing::tiny_unet(), cfg, first);
  CHECK_FALSE(r1.completed);
  CHECK(r1.steps == 6);
  TrainOptions rest{split.path()};
  rest.resume = true;
  const auto r2 = train_vanilla(data.set, testing::tiny_unet(), cfg, rest);
  CHECK(r2.completed);
  CHECK(r2.steps == 12);
  CHECK(read_file(checkpoint_path(whole.path(), Stage::kVanilla)) ==
        read_file(checkpoint_path(split.path(), Stage::kVanilla)));
  CHECK(read_file(log_path(whole.path(), Stage::kVanilla)) == read_file(log_path(split.path(), Stage::kVanilla)));

  // A checkpoint from a different configuration cannot be resumed.
  auto other = cfg;
  other.batch_size = 2;
  CHECK_THROWS_AS(train_vanilla(data.set, testing::tiny_unet(), other, rest), UsageError);
}

TEST_CASE("assigner and tax stages leave their frozen inputs untouched") {
  TinyData data;
  testing::TempDir run("train-stages");
  train_vanilla(data.set, testing::tiny_unet(), testing::tiny_stage(Stage::kVanilla, 1), {run.path()});
  const SegModel vanilla = segmodel_from_checkpoint(load_stage_checkpoint(run.path(), Stage::kVanilla));
  const auto vanilla_sum = checksum(vanilla.groups()[0]);

  const auto ra = train_assigner(data.set, vanilla, testing::tiny_assigner(), testing::tiny_stage(Stage::kAssigner, 2),
                                 {run.path()});
  CHECK(ra.completed);
  CHECK(checksum(vanilla.groups()[0]) == vanilla_sum);
  const Assigner assigner = assigner_from_checkpoint(load_stage_checkpoint(run.path(), Stage::kAssigner));
  const auto assigner_hash = bank_hash(assigner);

  auto tax_cfg = testing::tiny_stage(Stage::kTax, 1);
  const auto rt = train_tax(data.set, assigner, &vanilla, testing::tiny_unet(), tax_cfg, {run.path()});
  CHECK(rt.completed);
  CHECK(bank_hash(assigner) == assigner_hash);
  tax_cfg.routing = RoutingSource::kPseudo;
  CHECK(train_tax(data.set, assigner, &vanilla, testing::tiny_unet(), tax_cfg, {run.path()}).completed);
  CHECK_THROWS_AS(train_tax(data.set, assigner, nullptr, testing::tiny_unet(), tax_cfg, {run.path()}), Error);

  const SegModel routed = segmodel_from_checkpoint(load_stage_checkpoint(run.path(), Stage::kTax));
  CHECK(routed.n_annotators() == 4);
  CHECK_THROWS_AS(load_stage_checkpoint(run.path() / "missing", Stage::kTax), Error);
}

TEST_CASE("assigner loss falls over a short run") {
  TinyData data(4, 16);
  testing::TempDir run("train-assigner");
  train_vanilla(data.set, testing::tiny_unet(), testing::tiny_stage(Stage::kVanilla, 1), {run.path()});
  const SegModel vanilla = segmodel_from_checkpoint(load_stage_checkpoint(run.path(), Stage::kVanilla));
  auto cfg = testing::tiny_stage(Stage::kAssigner, 15);
  cfg.learning_rate = 0.05;
  const auto r = train_assigner(data.set, vanilla, testing::tiny_assigner(), cfg, {run.path()});
  CHECK(r.epoch_losses.back() < r.epoch_losses.front());
}
