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

// tax: dataset generation, staged training, evaluation and explanation.
//
// Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or missing
// precondition.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "tax/config.hpp"
#include "tax/error.hpp"
#include "tax/explain.hpp"
#include "tax/metrics.hpp"
#include "tax/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr const char* kIndexName = "prototype_index.json";

struct CommonFlags {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config file overlaid on the defaults");
  cmd->add_option("--set", f.overrides, "Override one config key, e.g. --set train.tax.epochs=5 (repeatable)");
  cmd->add_option("--seed", f.seed, "Global seed (overrides TAX_SEED and the config file)");
}

/// defaults < TAX_SEED < config file < flags
tax::RunConfig resolve_config(const CommonFlags& f) {
  tax::RunConfig cfg;
  if (const char* env = std::getenv("TAX_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      cfg.seed = std::stoull(env, &used);
      if (env[used] != '\0') throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw tax::UsageError(std::string("TAX_SEED is not an unsigned integer: ") + env);
    }
  }
  if (!f.config_file.empty()) {
    json patch;
    try {
      patch = json::parse(tax::read_file(f.config_file));
    } catch (const json::exception& e) {
      throw tax::UsageError(f.config_file + ": " + e.what());
    }
    cfg = tax::merge_config(cfg, patch);
  }
  for (const auto& o : f.overrides) cfg = tax::apply_override(cfg, o);
  if (f.seed) cfg.seed = *f.seed;
  return cfg;
}

tax::DatasetManifest open_manifest(const fs::path& data) {
  if (!fs::exists(data / tax::kManifestName)) {
    throw tax::UsageError("no dataset at " + data.string() + " (missing " + tax::kManifestName + "); run gen-data first");
  }
  return tax::read_manifest(data);
}

/// Model and assigner shapes follow the dataset, whatever the config says.
void align_with_manifest(tax::RunConfig& cfg, const tax::DatasetManifest& m) {
  cfg.unet.classes = m.classes;
  cfg.assigner.n_annotators = m.n_annotators;
  cfg.data.n_annotators = m.n_annotators;
  cfg.data.scene.classes = m.classes;
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonFlags& common, const fs::path& out, std::optional<int> n_annotators, bool force) {
  tax::RunConfig cfg = resolve_config(common);
  if (n_annotators) {
    if (*n_annotators < 1 || *n_annotators > 4) throw tax::UsageError("--n-annotators must be in 1..4");
    cfg.data.n_annotators = *n_annotators;
    cfg.assigner.n_annotators = *n_annotators;
  }
  if (fs::exists(out) && !fs::is_directory(out)) throw tax::UsageError(out.string() + " exists and is not a directory");
  if (non_empty_dir(out)) {
    if (!force) throw tax::UsageError(out.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(out);
  }
  const auto manifest = tax::build_dataset(out, cfg.seed, cfg.data);
  for (auto split : {tax::Split::kTrain, tax::Split::kVal, tax::Split::kTest}) {
    std::map<int, int> per;
    for (const auto& r : manifest.split(split)) ++per[r.annotator];
    std::cout << tax::to_string(split) << ": " << manifest.split(split).size() << " records";
    for (auto [a, n] : per) std::cout << "  annotator " << a << " (" << manifest.tendencies[a - 1] << "): " << n;
    std::cout << "\n";
  }
  return 0;
}

int cmd_train(const CommonFlags& common, const std::string& stage_name, const fs::path& data_dir, const fs::path& out,
              bool resume, bool force, bool quiet) {
  const tax::Stage stage = tax::parse_stage(stage_name);
  tax::RunConfig cfg = resolve_config(common);
  const auto manifest = open_manifest(data_dir);
  align_with_manifest(cfg, manifest);

  auto require = [&](tax::Stage s) {
    if (!fs::exists(tax::checkpoint_path(out, s))) {
      throw tax::UsageError("stage " + tax::to_string(stage) + " needs a trained " + tax::to_string(s) +
                            " checkpoint in " + out.string() + "; run `tax train --stage " + tax::to_string(s) +
                            "` first");
    }
    return tax::load_stage_checkpoint(out, s);
  };
  std::optional<tax::SegModel> vanilla;
  std::optional<tax::Assigner> assigner;
  const tax::StageConfig sc = cfg.stage(stage);
  if (stage == tax::Stage::kAssigner || (stage == tax::Stage::kTax && sc.routing == tax::RoutingSource::kPseudo)) {
    vanilla.emplace(tax::segmodel_from_checkpoint(require(tax::Stage::kVanilla)));
  }
  if (stage == tax::Stage::kTax) assigner.emplace(tax::assigner_from_checkpoint(require(tax::Stage::kAssigner)));

  const fs::path ckpt = tax::checkpoint_path(out, stage);
  if (fs::exists(ckpt) && !resume) {
    if (!force) {
      throw tax::UsageError(ckpt.string() + " exists; pass --resume to continue it or --force to retrain");
    }
    fs::remove(ckpt);
    fs::remove(tax::log_path(out, stage));
  }
  if (resume && !fs::exists(ckpt)) throw tax::UsageError("--resume: no checkpoint at " + ckpt.string());
  fs::create_directories(out);

  const auto data = tax::load_training_set(data_dir, manifest);
  tax::TrainOptions opts;
  opts.run_dir = out;
  opts.resume = resume;
  opts.verbose = !quiet;
  tax::TrainResult result;
  switch (stage) {
    case tax::Stage::kVanilla: result = tax::train_vanilla(data, cfg.unet, sc, opts); break;
    case tax::Stage::kAssigner: result = tax::train_assigner(data, *vanilla, cfg.assigner, sc, opts); break;
    case tax::Stage::kTax:
      result = tax::train_tax(data, *assigner, vanilla ? &*vanilla : nullptr, cfg.unet, sc, opts);
      break;
  }
  std::cout << tax::to_string(stage) << ": " << result.steps << " steps";
  if (!result.epoch_losses.empty()) std::cout << ", final epoch loss " << result.epoch_losses.back();
  std::cout << "\ncheckpoint: " << ckpt.string() << "\n";
  return 0;
}

/// Reads <pred_dir>/<id>.pgm for every test record.
std::vector<tax::Mask> read_predictions(const fs::path& pred_dir, const std::vector<tax::Sample>& test) {
  std::vector<tax::Mask> out;
  for (const auto& s : test) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.pgm", s.id);
    const fs::path p = pred_dir / name;
    if (!fs::exists(p)) throw tax::UsageError("missing prediction " + p.string());
    out.push_back(tax::read_pgm(p));
  }
  return out;
}

int cmd_eval(const CommonFlags& common, const fs::path& run, const fs::path& data_dir, const fs::path& report_path,
             const std::string& split_name, const fs::path& pred_dir) {
  tax::RunConfig cfg = resolve_config(common);
  const auto manifest = open_manifest(data_dir);
  align_with_manifest(cfg, manifest);
  const tax::Split split = split_name == "val" ? tax::Split::kVal : split_name == "test" ? tax::Split::kTest
                                                                                         : throw tax::UsageError("--split must be val or test");
  const auto samples = tax::load_split(data_dir, manifest, split);
  if (samples.empty()) throw tax::UsageError("the " + split_name + " split is empty");
  const int K = manifest.classes, N = manifest.n_annotators;

  auto score = [&](const std::vector<tax::Mask>& pred) {
    tax::PixelCounts counts(K);
    for (std::size_t i = 0; i < samples.size(); ++i) counts.add(pred[i], samples[i].mask);
    return tax::make_report(counts, static_cast<int>(samples.size()));
  };

  json report = {{"split", split_name}, {"n_annotators", N}, {"classes", K}};
  if (!pred_dir.empty()) {
    report["predictions"] = tax::to_json(score(read_predictions(pred_dir, samples)));
  } else {
    if (run.empty()) throw tax::UsageError("eval needs --ckpt <run dir> or --pred <mask dir>");
    if (!fs::exists(tax::checkpoint_path(run, tax::Stage::kTax))) {
      throw tax::UsageError("no tax checkpoint in " + run.string() + "; run `tax train --stage tax` first");
    }
    const auto model = tax::segmodel_from_checkpoint(tax::load_stage_checkpoint(run, tax::Stage::kTax));
    const auto assigner = tax::assigner_from_checkpoint(tax::load_stage_checkpoint(run, tax::Stage::kAssigner));
    const auto routes = tax::predict_annotator_masks(assigner, samples);
    report["tax"] = tax::to_json(score(tax::predict_segmentation(model, samples, &routes)));
    const auto matrix = tax::per_tendency_eval(model, samples);
    report["per_tendency_miou"] = matrix;
    report["diagonal_margin"] = tax::diagonal_margin(matrix);
    std::vector<int> truth;
    for (const auto& s : samples) truth.push_back(s.annotator);
    report["assignment_accuracy"] = tax::assignment_accuracy(routes, truth, N + 1, cfg.eval.vote_all_pixels);
    report["assignment_vote"] = cfg.eval.vote_all_pixels ? "all_pixels" : "annotator_cells";
    if (fs::exists(tax::checkpoint_path(run, tax::Stage::kVanilla))) {
      const auto vanilla = tax::segmodel_from_checkpoint(tax::load_stage_checkpoint(run, tax::Stage::kVanilla));
      report["vanilla"] = tax::to_json(score(tax::predict_segmentation(vanilla, samples)));
    }
  }
  const std::string text = report.dump(2) + "\n";
  if (report_path.empty()) {
    std::cout << text;
  } else {
    tax::write_file(report_path, text);
    std::cout << "report: " << report_path.string() << "\n";
  }
  return 0;
}

std::pair<int, int> parse_pixel(const std::string& s) {
  std::istringstream in(s);
  int u = 0, v = 0;
  char comma = 0;
  if (!(in >> u >> comma >> v) || comma != ',' || !in.eof()) {
    throw tax::UsageError("--pixel expects u,v (row,column), got '" + s + "'");
  }
  return {u, v};
}

int cmd_explain(const CommonFlags& common, const fs::path& run, const fs::path& data_dir, const fs::path& image_path,
                const std::string& pixel, const fs::path& out, bool rebuild_index, bool force) {
  tax::RunConfig cfg = resolve_config(common);
  const auto [u, v] = parse_pixel(pixel);
  const tax::RgbImage image = tax::read_ppm(image_path);
  if (u < 0 || v < 0 || u >= image.height || v >= image.width) {
    throw tax::UsageError("--pixel " + pixel + " is outside the " + std::to_string(image.height) + "x" +
                          std::to_string(image.width) + " image");
  }
  const auto manifest = open_manifest(data_dir);
  for (auto s : {tax::Stage::kAssigner, tax::Stage::kTax}) {
    if (!fs::exists(tax::checkpoint_path(run, s))) {
      throw tax::UsageError("explain needs a trained " + tax::to_string(s) + " checkpoint in " + run.string());
    }
  }
  if (non_empty_dir(out) && !force) throw tax::UsageError(out.string() + " is not empty; pass --force to overwrite");

  const auto model = tax::segmodel_from_checkpoint(tax::load_stage_checkpoint(run, tax::Stage::kTax));
  const auto assigner = tax::assigner_from_checkpoint(tax::load_stage_checkpoint(run, tax::Stage::kAssigner));
  const fs::path index_path = run / kIndexName;
  tax::PrototypeIndex index;
  if (rebuild_index || !fs::exists(index_path)) {
    const auto train = tax::load_split(data_dir, manifest, tax::Split::kTrain);
    index = tax::build_prototype_index(assigner, train, cfg.eval.trace_top);
    tax::save_prototype_index(index_path, index);
    std::cout << "prototype index: " << index_path.string() << "\n";
  } else {
    index = tax::load_prototype_index(index_path);
  }

  std::map<int, const tax::Record*> by_id;
  for (const auto& r : manifest.train) by_id[r.id] = &r;
  auto load_train = [&](int id) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw tax::UsageError("prototype index refers to unknown training record " + std::to_string(id));
    return tax::read_ppm(data_dir / it->second->image);
  };
  const auto record = tax::explain(model, assigner, index, image, u, v, image_path.filename().string(), out, load_train);
  std::cout << tax::to_json(record).dump(2) << "\n";
  return 0;
}

std::string config_key_listing() {
  std::ostringstream os;
  os << "Config keys (--config file or --set key=value) and defaults:\n";
  for (const auto& [key, value] : tax::describe_keys(tax::RunConfig{})) os << "  " << key << " = " << value << "\n";
  os << "Environment: TAX_SEED sets the global seed (below --config and --seed).\n"
        "Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or missing precondition.";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annotator-tendency segmentation: synthetic data, staged training, evaluation, explanations"};
  app.require_subcommand(1);
  app.footer(config_key_listing());

  CommonFlags common;
  bool force = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic multi-annotator dataset");
  add_common(gen, common);
  fs::path gen_out;
  std::optional<int> n_annotators;
  gen->add_option("--out", gen_out, "Dataset directory")->required();
  gen->add_option("--n-annotators", n_annotators, "Number of annotators (1-4)");
  gen->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "Train one stage: vanilla, then assigner, then tax");
  add_common(train, common);
  std::string stage;
  fs::path train_data, train_out;
  bool resume = false, quiet = false;
  train->add_option("--stage", stage, "vanilla | assigner | tax")->required();
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Run directory holding checkpoints and logs")->required();
  train->add_flag("--resume", resume, "Continue from the stage checkpoint");
  train->add_flag("--force", force, "Retrain even if the stage checkpoint exists");
  train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  auto* eval = app.add_subcommand("eval", "Evaluate a run (or a directory of predicted masks)");
  add_common(eval, common);
  fs::path eval_ckpt, eval_data, report, pred_dir;
  std::string split = "test";
  eval->add_option("--ckpt", eval_ckpt, "Run directory with the trained checkpoints");
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--report", report, "Write the JSON report here instead of stdout");
  eval->add_option("--split", split, "val | test")->capture_default_str();
  eval->add_option("--pred", pred_dir, "Score <id>.pgm masks from this directory instead of a model");

  auto* expl = app.add_subcommand("explain", "Explain the annotator assignment at one pixel");
  add_common(expl, common);
  fs::path expl_ckpt, expl_data, image, expl_out;
  std::string pixel;
  bool rebuild = false;
  expl->add_option("--ckpt", expl_ckpt, "Run directory with the trained checkpoints")->required();
  expl->add_option("--data", expl_data, "Dataset directory (training images for trace-back)")->required();
  expl->add_option("--image", image, "Query image (binary PPM)")->required();
  expl->add_option("--pixel", pixel, "Query pixel as u,v (row,column)")->required();
  expl->add_option("--out", expl_out, "Directory for overlays and explanation.json")->required();
  expl->add_flag("--rebuild-index", rebuild, "Rebuild the prototype index from the training split");
  expl->add_flag("--force", force, "Overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common, gen_out, n_annotators, force);
    if (*train) return cmd_train(common, stage, train_data, train_out, resume, force, quiet);
    if (*eval) return cmd_eval(common, eval_ckpt, eval_data, report, split, pred_dir);
    if (*expl) return cmd_explain(common, expl_ckpt, expl_data, image, pixel, expl_out, rebuild, force);
  } catch (const tax::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
