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
#include "tax/training.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "tax/error.hpp"
#include "tax/image.hpp"
#include "tax/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tax {

TrainingSet load_training_set(const fs::path& data_root, const DatasetManifest& manifest) {
  TrainingSet t;
  t.samples = load_split(data_root, manifest, Split::kTrain);
  t.n_annotators = manifest.n_annotators;
  t.classes = manifest.classes;
  t.height = manifest.height;
  t.width = manifest.width;
  if (t.samples.empty()) throw ValueError("training split is empty");
  return t;
}

fs::path checkpoint_path(const fs::path& run_dir, Stage stage) { return run_dir / (to_string(stage) + ".ckpt"); }
fs::path log_path(const fs::path& run_dir, Stage stage) { return run_dir / (to_string(stage) + ".log.jsonl"); }

namespace {

constexpr int kInferenceChunk = 16;

std::vector<const RgbImage*> image_ptrs(const std::vector<const Sample*>& batch) {
  std::vector<const RgbImage*> out;
  for (const auto* s : batch) out.push_back(&s->image);
  return out;
}

std::vector<const Mask*> mask_ptrs(const std::vector<const Sample*>& batch) {
  std::vector<const Mask*> out;
  for (const auto* s : batch) out.push_back(&s->mask);
  return out;
}

void require_finite(const Tensor& loss, const char* what) {
  if (!std::isfinite(loss.item())) throw NumericError(std::string(what) + " loss is not finite");
}

struct LoopState {
  int epoch = 0;          // epochs completed
  int step_in_epoch = 0;  // steps completed within the current epoch
  long long global_step = 0;
  std::vector<int> order;  // current epoch's sample order, empty between epochs
  Rng rng;
  double loss_sum = 0.0;
  long long loss_count = 0;

  json to_json() const {
    return {{"epoch", epoch},       {"step_in_epoch", step_in_epoch}, {"global_step", global_step},
            {"order", order},       {"rng", rng.state()},             {"loss_sum", loss_sum},
            {"loss_count", loss_count}};
  }

  static LoopState from_json(const json& j) {
    LoopState s;
    try {
      s.epoch = j.at("epoch").get<int>();
      s.step_in_epoch = j.at("step_in_epoch").get<int>();
      s.global_step = j.at("global_step").get<long long>();
      s.order = j.at("order").get<std::vector<int>>();
      s.rng.set_state(j.at("rng").get<std::string>());
      s.loss_sum = j.at("loss_sum").get<double>();
      s.loss_count = j.at("loss_count").get<long long>();
    } catch (const json::exception& e) {
      throw FormatError(std::string("checkpoint: invalid training state (") + e.what() + ")");
    }
    return s;
  }
};

// Keeps only log lines for epochs that the checkpoint has completed.
void truncate_log(const fs::path& path, int epochs_done) {
  if (!fs::exists(path)) return;
  std::istringstream in(read_file(path));
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("epoch") && j["epoch"].get<int>() <= epochs_done) kept += line + "\n";
  }
  write_file(path, kept);
}

void append_log(const fs::path& path, Stage stage, int epoch, double loss) {
  std::string existing = fs::exists(path) ? read_file(path) : std::string();
  existing += json{{"stage", to_string(stage)}, {"epoch", epoch}, {"loss", loss}}.dump() + "\n";
  write_file(path, existing);
}

/// Shared epoch/batch driver. `step` runs one optimisation step on sample
/// indices (and receives the global step number); `snapshot` builds the checkpoint for a given loop state.
TrainResult run_loop(Stage stage, const StageConfig& cfg, const TrainOptions& opts, int n_samples, LoopState st,
                     const std::function<double(const std::vector<int>&, long long)>& step,
                     const std::function<Checkpoint(const LoopState&)>& snapshot) {
  fs::create_directories(opts.run_dir);
  const fs::path ckpt = checkpoint_path(opts.run_dir, stage);
  const fs::path log = log_path(opts.run_dir, stage);
  if (opts.resume) {
    truncate_log(log, st.epoch);
  } else if (fs::exists(log)) {
    fs::remove(log);
  }

  TrainResult result;
  result.steps = st.global_step;
  const int steps_per_epoch = (n_samples + cfg.batch_size - 1) / cfg.batch_size;
  const auto started = std::chrono::steady_clock::now();
  try {
    while (st.epoch < cfg.epochs) {
      if (st.order.empty()) {
        st.order.resize(static_cast<std::size_t>(n_samples));
        std::iota(st.order.begin(), st.order.end(), 0);
        st.rng.shuffle(st.order);
      }
      while (st.step_in_epoch < steps_per_epoch) {
        if (opts.stop_after_steps >= 0 && st.global_step >= opts.stop_after_steps) {
          save_checkpoint(ckpt, snapshot(st));
          result.steps = st.global_step;
          return result;
        }
        const int lo = st.step_in_epoch * cfg.batch_size;
        const int hi = std::min(n_samples, lo + cfg.batch_size);
        const std::vector<int> batch(st.order.begin() + lo, st.order.begin() + hi);
        const double loss = step(batch, st.global_step);
        st.loss_sum += loss * static_cast<double>(batch.size());
        st.loss_count += static_cast<long long>(batch.size());
        ++st.step_in_epoch;
        ++st.global_step;
      }
      const double epoch_loss = st.loss_sum / static_cast<double>(st.loss_count);
      ++st.epoch;
      st.step_in_epoch = 0;
      st.order.clear();
      st.loss_sum = 0.0;
      st.loss_count = 0;
      save_checkpoint(ckpt, snapshot(st));
      append_log(log, stage, st.epoch, epoch_loss);
      result.epoch_losses.push_back(epoch_loss);
      if (opts.verbose) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        std::cerr << "[" << to_string(stage) << "] epoch " << st.epoch << "/" << cfg.epochs << " loss " << epoch_loss
                  << " (" << secs << " s)\n";
      }
    }
  } catch (const NumericError& e) {
    throw NumericError(to_string(stage) + " diverged at epoch " + std::to_string(st.epoch + 1) + ", step " +
                       std::to_string(st.step_in_epoch + 1) + ": " + e.what() +
                       (fs::exists(ckpt) ? "; last good checkpoint: " + ckpt.string() : std::string()));
  }
  result.steps = st.global_step;
  result.completed = true;
  return result;
}

std::uint64_t shuffle_seed(const StageConfig& cfg) { return mix_seed(cfg.seed ^ 0x73687566666c65ULL); }

json stage_echo(const StageConfig& cfg) {
  json j = to_json(cfg);
  j["seed"] = cfg.seed;
  return j;
}

std::uint64_t model_hash(const std::vector<ParamGroup>& groups) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& g : groups) h = mix_seed(h ^ checksum(g));
  return h;
}

// Restores parameters, optimiser and loop state when resuming.
LoopState resume_or_start(const TrainOptions& opts, Stage stage, const StageConfig& cfg,
                          const std::vector<Parameter>& params, OptimState& optim, const json& model_echo) {
  LoopState st;
  st.rng = Rng(shuffle_seed(cfg));
  if (!opts.resume) return st;
  const Checkpoint ckpt = load_stage_checkpoint(opts.run_dir, stage);
  if (ckpt.config.at("model") != model_echo) {
    throw UsageError("cannot resume " + to_string(stage) + ": checkpoint was written for a different model or input");
  }
  // Only the epoch budget may change between runs.
  json saved = ckpt.config.value("stage", json::object()), now = stage_echo(cfg);
  saved.erase("epochs");
  now.erase("epochs");
  if (saved != now) {
    throw UsageError("cannot resume " + to_string(stage) + ": stage settings differ from the checkpoint (" +
                     saved.dump() + " vs " + now.dump() + ")");
  }
  restore_parameters(ckpt, params);
  restore_optimizer(ckpt, optim);
  return LoopState::from_json(ckpt.state);
}

}  // namespace

// ---------------------------------------------------------------------------
// Single steps

double vanilla_step(SegModel& model, OptimState& optim, const std::vector<const Sample*>& batch) {
  const auto images = image_ptrs(batch);
  const auto masks = mask_ptrs(batch);
  const Tensor logits = model.forward_vanilla(images_to_tensor(images));
  Tensor loss = ops::cross_entropy_map(logits, to_label_map(masks));
  require_finite(loss, "segmentation");
  loss.backward();
  sgd_step(model.groups(), optim, {ParamTag::backbone()});
  return loss.item();
}

double assigner_step(Assigner& assigner, OptimState& optim, const std::vector<const Sample*>& batch,
                     const std::vector<const std::vector<float>*>& pseudo, double temperature, std::uint64_t reseed) {
  const auto images = image_ptrs(batch);
  const Scores scores = assigner.score(images_to_tensor(images));
  std::vector<float> target;
  for (const auto* p : pseudo) target.insert(target.end(), p->begin(), p->end());
  const Tensor pseudo_t = Tensor::from(scores.soft.shape(), std::move(target));
  Tensor loss = assignment_loss(scores.soft, pseudo_t, static_cast<float>(temperature));
  require_finite(loss, "assignment");
  loss.backward();
  sgd_step(assigner.groups(), optim, {ParamTag::assigner()});
  reseed_degenerate(assigner.bank(), reseed);
  return loss.item();
}

double tax_step(SegModel& model, OptimState& optim, const std::vector<const Sample*>& batch,
                const std::vector<const Mask*>& routes) {
  if (routes.size() != batch.size()) throw ShapeError("tax_step: one route per sample required");
  const double total = static_cast<double>(batch.size());
  double loss_sum = 0.0;
  for (int k = 1; k <= model.n_annotators(); ++k) {
    std::vector<const Sample*> sub;
    std::vector<const Mask*> sub_routes;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i]->annotator == k) {
        sub.push_back(batch[i]);
        sub_routes.push_back(routes[i]);
      }
    }
    if (sub.empty()) continue;
    const double share = static_cast<double>(sub.size()) / total;
    const Tensor logits = model.forward_tax(images_to_tensor(image_ptrs(sub)), to_label_map(sub_routes));
    const Tensor ce = ops::cross_entropy_map(logits, to_label_map(mask_ptrs(sub)));
    require_finite(ce, "segmentation");
    Tensor loss = ops::scale(ce, static_cast<float>(share));
    loss.backward();
    sgd_step(model.groups(), optim, {ParamTag::annotator(k), ParamTag::shared(), ParamTag::backbone()});
    loss_sum += share * ce.item();
  }
  return loss_sum;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion

Checkpoint model_checkpoint(const SegModel& model, Stage stage) {
  Checkpoint c;
  c.stage = to_string(stage);
  c.config["model"] = {{"unet", to_json(model.config())}, {"n_annotators", model.n_annotators()}};
  store_parameters(c, model.parameters());
  return c;
}

SegModel segmodel_from_checkpoint(const Checkpoint& ckpt) {
  try {
    const auto& m = ckpt.config.at("model");
    SegModel model(unet_from_json(m.at("unet")), m.at("n_annotators").get<int>(), 0);
    restore_parameters(ckpt, model.parameters());
    return model;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint (" + ckpt.stage + "): missing model description (" + e.what() + ")");
  }
}

Checkpoint assigner_checkpoint(const Assigner& assigner) {
  Checkpoint c;
  c.stage = to_string(Stage::kAssigner);
  c.config["model"] = {{"assigner", to_json(assigner.config())}};
  store_parameters(c, assigner.parameters());
  return c;
}

Assigner assigner_from_checkpoint(const Checkpoint& ckpt) {
  try {
    Assigner a(assigner_from_json(ckpt.config.at("model").at("assigner")), 0);
    restore_parameters(ckpt, a.parameters());
    return a;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint (" + ckpt.stage + "): missing assigner description (" + e.what() + ")");
  }
}

Checkpoint load_stage_checkpoint(const fs::path& run_dir, Stage stage) {
  const fs::path path = checkpoint_path(run_dir, stage);
  if (!fs::exists(path)) {
    throw UsageError("missing " + to_string(stage) + " checkpoint '" + path.string() + "'; run `tax train --stage " +
                     to_string(stage) + "` first");
  }
  Checkpoint c = load_checkpoint(path);
  if (c.stage != to_string(stage)) {
    throw FormatError(path.string() + ": stage marker '" + c.stage + "', expected '" + to_string(stage) + "'");
  }
  return c;
}

std::vector<Mask> predict_annotator_masks(const Assigner& assigner, const std::vector<Sample>& samples) {
  NoGradGuard no_grad;
  std::vector<Mask> out;
  for (std::size_t lo = 0; lo < samples.size(); lo += kInferenceChunk) {
    std::vector<const RgbImage*> imgs;
    for (std::size_t i = lo; i < std::min(samples.size(), lo + kInferenceChunk); ++i) imgs.push_back(&samples[i].image);
    auto res = assigner.assign(images_to_tensor(imgs));
    for (auto& m : res.hard) out.push_back(std::move(m));
  }
  return out;
}

std::vector<Mask> predict_uncertainty(const SegModel& vanilla, const std::vector<Sample>& samples, double q,
                                      UncertaintyMode mode) {
  NoGradGuard no_grad;
  std::vector<Mask> out;
  const int k = vanilla.config().classes;
  for (std::size_t lo = 0; lo < samples.size(); lo += kInferenceChunk) {
    std::vector<const RgbImage*> imgs;
    for (std::size_t i = lo; i < std::min(samples.size(), lo + kInferenceChunk); ++i) imgs.push_back(&samples[i].image);
    const Tensor logits = vanilla.forward_vanilla(images_to_tensor(imgs));
    const int h = imgs[0]->height, w = imgs[0]->width;
    const std::size_t per = static_cast<std::size_t>(k) * h * w;
    for (std::size_t b = 0; b < imgs.size(); ++b) {
      const auto plane = logits.data().subspan(b * per, per);
      out.push_back(mode == UncertaintyMode::kBoundaryBand ? boundary_band_from_logits(plane, k, h, w)
                                                           : uncertainty_from_logits(plane, k, h, w, q));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

TrainResult train_vanilla(const TrainingSet& data, const UNetConfig& unet_in, const StageConfig& cfg,
                          const TrainOptions& opts) {
  validate(cfg);
  UNetConfig unet = unet_in;
  unet.classes = data.classes;
  SegModel model(unet, 0, cfg.seed);
  OptimState optim(static_cast<float>(cfg.learning_rate), static_cast<float>(cfg.momentum), model.groups());
  const json model_echo = {{"unet", to_json(unet)}, {"n_annotators", 0}};
  LoopState st = resume_or_start(opts, Stage::kVanilla, cfg, model.parameters(), optim, model_echo);

  auto step = [&](const std::vector<int>& idx, long long) {
    std::vector<const Sample*> batch;
    for (int i : idx) batch.push_back(&data.samples[static_cast<std::size_t>(i)]);
    return vanilla_step(model, optim, batch);
  };
  auto snapshot = [&](const LoopState& s) {
    Checkpoint c = model_checkpoint(model, Stage::kVanilla);
    c.config["model"] = model_echo;
    c.config["stage"] = stage_echo(cfg);
    c.state = s.to_json();
    store_optimizer(c, optim);
    return c;
  };
  return run_loop(Stage::kVanilla, cfg, opts, static_cast<int>(data.samples.size()), std::move(st), step, snapshot);
}

TrainResult train_assigner(const TrainingSet& data, const SegModel& vanilla, const AssignerConfig& acfg_in,
                           const StageConfig& cfg, const TrainOptions& opts) {
  validate(cfg);
  if (vanilla.routed()) throw UsageError("assigner stage needs the plain (vanilla) model");
  AssignerConfig acfg = acfg_in;
  acfg.n_annotators = data.n_annotators;
  Assigner assigner(acfg, cfg.seed);
  OptimState optim(static_cast<float>(cfg.learning_rate), static_cast<float>(cfg.momentum), assigner.groups());
  const json model_echo = {{"assigner", to_json(acfg)},
                           {"vanilla_hash", std::to_string(model_hash(vanilla.groups()))}};
  LoopState st = resume_or_start(opts, Stage::kAssigner, cfg, assigner.parameters(), optim, model_echo);

  // The plain model is frozen, so uncertainty and pseudo targets are fixed per image.
  const auto uncertainty = predict_uncertainty(vanilla, data.samples, cfg.uncertainty_q, cfg.uncertainty_mode);
  const int stride = acfg.encoder.stride();
  std::vector<std::vector<float>> pseudo;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    pseudo.push_back(build_pseudo_mask(uncertainty[i], data.samples[i].annotator, acfg.groups(), stride, stride));
  }

  auto step = [&](const std::vector<int>& idx, long long global_step) {
    std::vector<const Sample*> batch;
    std::vector<const std::vector<float>*> targets;
    for (int i : idx) {
      batch.push_back(&data.samples[static_cast<std::size_t>(i)]);
      targets.push_back(&pseudo[static_cast<std::size_t>(i)]);
    }
    return assigner_step(assigner, optim, batch, targets, cfg.temperature,
                         mix_seed(cfg.seed ^ static_cast<std::uint64_t>(global_step)));
  };
  auto snapshot = [&](const LoopState& s) {
    Checkpoint c = assigner_checkpoint(assigner);
    c.config["model"] = model_echo;
    c.config["stage"] = stage_echo(cfg);
    c.state = s.to_json();
    store_optimizer(c, optim);
    return c;
  };
  return run_loop(Stage::kAssigner, cfg, opts, static_cast<int>(data.samples.size()), std::move(st), step, snapshot);
}

TrainResult train_tax(const TrainingSet& data, const Assigner& assigner, const SegModel* vanilla,
                      const UNetConfig& unet_in, const StageConfig& cfg, const TrainOptions& opts) {
  validate(cfg);
  if (assigner.config().n_annotators != data.n_annotators) {
    throw UsageError("assigner was trained for " + std::to_string(assigner.config().n_annotators) +
                     " annotators, dataset has " + std::to_string(data.n_annotators));
  }
  UNetConfig unet = unet_in;
  unet.classes = data.classes;
  SegModel model(unet, data.n_annotators, cfg.seed);
  OptimState optim(static_cast<float>(cfg.learning_rate), static_cast<float>(cfg.momentum), model.groups());
  const json model_echo = {{"unet", to_json(unet)},
                           {"n_annotators", data.n_annotators},
                           {"assigner_hash", std::to_string(bank_hash(assigner))}};
  LoopState st = resume_or_start(opts, Stage::kTax, cfg, model.parameters(), optim, model_echo);

  // Routes are fixed per image because the assigner (and plain model) are frozen.
  std::vector<Mask> routes;
  if (cfg.routing == RoutingSource::kPredicted) {
    routes = predict_annotator_masks(assigner, data.samples);
  } else {
    if (!vanilla) throw UsageError("pseudo-mask routing needs the vanilla checkpoint");
    const auto uncertainty = predict_uncertainty(*vanilla, data.samples, cfg.uncertainty_q, cfg.uncertainty_mode);
    const int stride = assigner.config().encoder.stride();
    const int groups = assigner.config().groups();
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      const auto p = build_pseudo_mask(uncertainty[i], data.samples[i].annotator, groups, stride, stride);
      routes.push_back(hard_mask(p, groups, data.height / stride, data.width / stride, stride, stride));
    }
  }

  auto step = [&](const std::vector<int>& idx, long long) {
    std::vector<const Sample*> batch;
    std::vector<const Mask*> batch_routes;
    for (int i : idx) {
      batch.push_back(&data.samples[static_cast<std::size_t>(i)]);
      batch_routes.push_back(&routes[static_cast<std::size_t>(i)]);
    }
    return tax_step(model, optim, batch, batch_routes);
  };
  auto snapshot = [&](const LoopState& s) {
    Checkpoint c = model_checkpoint(model, Stage::kTax);
    c.config["model"] = model_echo;
    c.config["stage"] = stage_echo(cfg);
    c.state = s.to_json();
    store_optimizer(c, optim);
    return c;
  };
  return run_loop(Stage::kTax, cfg, opts, static_cast<int>(data.samples.size()), std::move(st), step, snapshot);
}

}  // namespace tax
