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
#include "tax/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tax/error.hpp"

namespace tax {
namespace {

constexpr int kIndexVersion = 1;
constexpr std::size_t kChunk = 16;
constexpr int kPatchScale = 8;

using Rgb = std::array<int, 3>;

const std::array<Rgb, 8> kClassPalette = {{{0, 0, 0}, {230, 60, 60}, {60, 200, 90}, {70, 110, 240},
                                           {240, 200, 40}, {200, 80, 220}, {40, 210, 210}, {250, 140, 40}}};
const std::array<Rgb, 8> kAnnotatorPalette = {{{240, 90, 40}, {40, 160, 240}, {150, 220, 40}, {220, 60, 200},
                                               {250, 220, 60}, {60, 230, 180}, {180, 120, 250}, {250, 150, 150}}};
const Rgb kSharedColor = {128, 128, 128};

std::uint8_t blend(std::uint8_t a, int b) { return static_cast<std::uint8_t>((a + b + 1) / 2); }

RgbImage tint(const RgbImage& image, const Mask& labels, const std::function<const Rgb*(int)>& color) {
  RgbImage out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const Rgb* c = color(labels.at(y, x));
      if (!c) continue;
      auto* px = out.at(y, x);
      for (int ch = 0; ch < 3; ++ch) px[ch] = blend(px[ch], (*c)[ch]);
    }
  return out;
}

void mark_pixel(RgbImage& image, int u, int v) {
  for (int d = -2; d <= 2; ++d) {
    for (auto [y, x] : {std::pair{u + d, v}, std::pair{u, v + d}}) {
      if (y < 0 || x < 0 || y >= image.height || x >= image.width) continue;
      auto* px = image.at(y, x);
      px[0] = 255;
      px[1] = 255;
      px[2] = 255;
    }
  }
}

Box cell_box(int cu, int cv, int rh, int rw) { return {cu * rh, cv * rw, rh, rw}; }

nlohmann::json box_json(const Box& b) {
  return {{"y0", b.y0}, {"x0", b.x0}, {"height", b.height}, {"width", b.width}};
}

Box box_from_json(const nlohmann::json& j) {
  return {j.at("y0").get<int>(), j.at("x0").get<int>(), j.at("height").get<int>(), j.at("width").get<int>()};
}

nlohmann::json trace_json(const PrototypeTrace& t) {
  return {{"record", t.record}, {"annotator", t.annotator}, {"cell_u", t.cell_u}, {"cell_v", t.cell_v},
          {"box", box_json(t.box)}, {"score", t.score}};
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

double cell_cosine(const Tensor& features, int b, int cell, const PrototypeBank& bank, int prototype, float eps) {
  const int d = bank.dim(), n = bank.count();
  const auto cells = static_cast<std::size_t>(features.dim(2) * features.dim(3));
  const auto f = features.data();
  const auto p = bank.prototypes.data();
  const float* fb = f.data() + static_cast<std::size_t>(b) * d * cells;
  double dot = 0.0, nf = 0.0, np = 0.0;
  for (int i = 0; i < d; ++i) {
    const double fi = fb[static_cast<std::size_t>(i) * cells + cell];
    const double pi = p[static_cast<std::size_t>(i) * n + prototype];
    dot += fi * pi;
    nf += fi * fi;
    np += pi * pi;
  }
  return dot / (std::max(std::sqrt(nf), double(eps)) * std::max(std::sqrt(np), double(eps)));
}

PrototypeIndex build_prototype_index(const Assigner& assigner, const std::vector<Sample>& train, int top) {
  if (top < 1) throw ValueError("prototype index: top must be >= 1");
  if (train.empty()) throw ValueError("prototype index: no training records");
  const PrototypeBank& bank = assigner.bank();
  PrototypeIndex index;
  index.groups = bank.groups;
  index.per_group = bank.per_group;
  index.top = top;
  index.bank_hash = bank_hash(assigner);
  index.traces.resize(static_cast<std::size_t>(bank.count()));

  // Strictly greater keeps the earlier candidate on ties; candidates arrive in scan order.
  auto offer = [top](std::vector<PrototypeTrace>& list, const PrototypeTrace& t) {
    auto pos = std::find_if(list.begin(), list.end(), [&](const PrototypeTrace& o) { return t.score > o.score; });
    if (pos == list.end() && static_cast<int>(list.size()) >= top) return;
    list.insert(pos, t);
    if (static_cast<int>(list.size()) > top) list.pop_back();
  };

  NoGradGuard no_grad;
  for (std::size_t lo = 0; lo < train.size(); lo += kChunk) {
    const std::size_t hi = std::min(train.size(), lo + kChunk);
    std::vector<const RgbImage*> imgs;
    for (std::size_t i = lo; i < hi; ++i) imgs.push_back(&train[i].image);
    const Tensor images = images_to_tensor(imgs);
    const Tensor features = assigner.encode(images);
    const int h = static_cast<int>(features.dim(2)), w = static_cast<int>(features.dim(3));
    index.cell_h = static_cast<int>(images.dim(2)) / h;
    index.cell_w = static_cast<int>(images.dim(3)) / w;
    for (std::size_t i = lo; i < hi; ++i) {
      const int b = static_cast<int>(i - lo);
      for (int c = 0; c < h * w; ++c)
        for (int j = 0; j < bank.count(); ++j) {
          PrototypeTrace t;
          t.record = train[i].id;
          t.annotator = train[i].annotator;
          t.cell_u = c / w;
          t.cell_v = c % w;
          t.box = cell_box(t.cell_u, t.cell_v, index.cell_h, index.cell_w);
          t.score = cell_cosine(features, b, c, bank, j);
          offer(index.traces[static_cast<std::size_t>(j)], t);
        }
    }
  }
  return index;
}

nlohmann::json to_json(const PrototypeIndex& index) {
  nlohmann::json protos = nlohmann::json::array();
  for (std::size_t j = 0; j < index.traces.size(); ++j) {
    nlohmann::json traces = nlohmann::json::array();
    for (const auto& t : index.traces[j]) traces.push_back(trace_json(t));
    protos.push_back({{"index", j}, {"group", static_cast<int>(j) / index.per_group + 1}, {"traces", traces}});
  }
  return {{"version", kIndexVersion}, {"bank_hash", hex(index.bank_hash)}, {"groups", index.groups},
          {"per_group", index.per_group}, {"cell_h", index.cell_h}, {"cell_w", index.cell_w},
          {"top", index.top}, {"prototypes", protos}};
}

PrototypeIndex prototype_index_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kIndexVersion) {
      throw FormatError("prototype index: unsupported version " + j.at("version").dump());
    }
    PrototypeIndex index;
    index.bank_hash = std::stoull(j.at("bank_hash").get<std::string>(), nullptr, 16);
    index.groups = j.at("groups").get<int>();
    index.per_group = j.at("per_group").get<int>();
    index.cell_h = j.at("cell_h").get<int>();
    index.cell_w = j.at("cell_w").get<int>();
    index.top = j.at("top").get<int>();
    for (const auto& p : j.at("prototypes")) {
      auto& list = index.traces.emplace_back();
      for (const auto& t : p.at("traces")) {
        list.push_back({t.at("record").get<int>(), t.at("annotator").get<int>(), t.at("cell_u").get<int>(),
                        t.at("cell_v").get<int>(), box_from_json(t.at("box")), t.at("score").get<double>()});
      }
    }
    if (static_cast<int>(index.traces.size()) != index.groups * index.per_group) {
      throw FormatError("prototype index: expected " + std::to_string(index.groups * index.per_group) +
                        " prototypes, found " + std::to_string(index.traces.size()));
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prototype index: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("prototype index: bad bank hash: ") + e.what());
  }
}

void save_prototype_index(const std::filesystem::path& path, const PrototypeIndex& index) {
  write_file(path, to_json(index).dump(1) + "\n");
}

PrototypeIndex load_prototype_index(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    return prototype_index_from_json(j);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void check_index(const PrototypeIndex& index, const Assigner& assigner) {
  const auto current = bank_hash(assigner);
  if (index.bank_hash != current) {
    throw UsageError("prototype index is stale (built for assigner " + hex(index.bank_hash) + ", current is " +
                     hex(current) + "); rerun with --rebuild-index");
  }
}

RgbImage crop_patch(const RgbImage& image, const Box& box, int scale) {
  if (box.y0 < 0 || box.x0 < 0 || box.height < 1 || box.width < 1 || box.y0 + box.height > image.height ||
      box.x0 + box.width > image.width || scale < 1) {
    throw ValueError("crop: box outside image");
  }
  RgbImage out(box.height * scale, box.width * scale);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) std::copy_n(image.at(box.y0 + y / scale, box.x0 + x / scale), 3, out.at(y, x));
  return out;
}

nlohmann::json to_json(const ExplanationRecord& r) {
  return {{"image", r.image},
          {"pixel", {{"u", r.u}, {"v", r.v}}},
          {"predicted_class", r.predicted_class},
          {"who", r.who},
          {"prototype", r.prototype},
          {"prototype_group", r.prototype_group},
          {"score", r.score},
          {"query_box", box_json(r.query_box)},
          {"trace", trace_json(r.trace)},
          {"overlays", r.overlays}};
}

ExplanationRecord explain(const SegModel& model, const Assigner& assigner, const PrototypeIndex& index,
                          const RgbImage& image, int u, int v, const std::string& image_name,
                          const std::filesystem::path& out_dir, const TrainingImageLoader& load_train) {
  check_index(index, assigner);
  if (u < 0 || v < 0 || u >= image.height || v >= image.width) {
    throw ValueError("explain: pixel (" + std::to_string(u) + "," + std::to_string(v) + ") outside " +
                     std::to_string(image.height) + "x" + std::to_string(image.width) + " image");
  }
  if (model.routed() && model.n_annotators() != assigner.config().n_annotators) {
    throw ValueError("explain: model and assigner disagree on the annotator count");
  }

  NoGradGuard no_grad;
  const Tensor images = image_to_tensor(image);
  const Tensor features = assigner.encode(images);
  const Scores scores = score_prototypes(features, assigner.bank());
  const int h = scores.height, w = scores.width;
  const int rh = image.height / h, rw = image.width / w;
  const int G = assigner.config().groups();
  const Mask who = hard_mask(scores.soft.data(), G, h, w, rh, rw);

  Mask seg;
  if (model.routed()) {
    const Mask* route = &who;
    seg = argmax_masks(model.forward_tax(images, to_label_map(std::span(&route, 1))))[0];
  } else {
    seg = argmax_masks(model.forward_vanilla(images))[0];
  }

  ExplanationRecord r;
  r.image = image_name;
  r.u = u;
  r.v = v;
  r.predicted_class = seg.at(u, v);
  r.who = who.at(u, v);
  const int cu = u / rh, cv = v / rw, cell = cu * w + cv;
  r.prototype = scores.winner[static_cast<std::size_t>(cell)];
  r.prototype_group = assigner.bank().group_of(r.prototype);
  r.score = cell_cosine(features, 0, cell, assigner.bank(), r.prototype);
  r.query_box = cell_box(cu, cv, rh, rw);
  const auto& traces = index.traces.at(static_cast<std::size_t>(r.prototype));
  if (traces.empty()) throw FormatError("prototype index has no trace for prototype " + std::to_string(r.prototype));
  r.trace = traces.front();

  if (out_dir.empty()) return r;

  const int n = assigner.config().n_annotators;
  RgbImage seg_overlay = tint(image, seg, [](int c) { return c == 0 ? nullptr : &kClassPalette[c % kClassPalette.size()]; });
  RgbImage who_overlay = tint(image, who, [n](int k) {
    return k == n + 1 ? &kSharedColor : &kAnnotatorPalette[(k - 1) % kAnnotatorPalette.size()];
  });
  mark_pixel(seg_overlay, u, v);
  mark_pixel(who_overlay, u, v);
  auto emit = [&](const std::string& name, const RgbImage& img) {
    write_ppm(out_dir / name, img);
    r.overlays.push_back(name);
  };
  emit("segmentation.ppm", seg_overlay);
  emit("annotators.ppm", who_overlay);
  write_pgm(out_dir / "annotator_mask.pgm", who);  // annotator index as gray level
  r.overlays.push_back("annotator_mask.pgm");
  emit("query_patch.ppm", crop_patch(image, r.query_box, kPatchScale));
  if (load_train) emit("traced_patch.ppm", crop_patch(load_train(r.trace.record), r.trace.box, kPatchScale));
  write_file(out_dir / "explanation.json", to_json(r).dump(2) + "\n");
  return r;
}

}  // namespace tax
