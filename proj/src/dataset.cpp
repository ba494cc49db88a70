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
#include <cstdio>
#include <set>

#include <json.hpp>

#include "tax/error.hpp"
#include "tax/rng.hpp"
#include "tax/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tax {

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

const std::vector<Record>& DatasetManifest::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

namespace {

std::string record_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", id);
  return buf;
}

struct Built {
  Record record;
  Scene scene;
  Mask mask;
  std::vector<Mask> variants;
};

Built build_record(std::uint64_t seed, const DatasetSpec& spec, const std::vector<Tendency>& tendencies,
                   Split split, int id, int index_in_split) {
  Built b;
  const int annotator = index_in_split % spec.n_annotators + 1;
  b.scene = generate_scene(mix_seed(seed ^ static_cast<std::uint64_t>(id)), spec.scene, annotator);

  const std::string dir = to_string(split);
  const std::string stem = record_stem(id);
  Record& r = b.record;
  r.id = id;
  r.annotator = annotator;
  r.tendency = to_string(tendencies[static_cast<std::size_t>(annotator - 1)]);
  r.image = dir + "/images/" + stem + ".ppm";
  r.orig = dir + "/orig/" + stem + ".pgm";
  if (split == Split::kTrain) {
    r.mask = dir + "/masks/" + stem + ".pgm";
    b.mask = manipulate(b.scene.mask, tendencies[static_cast<std::size_t>(annotator - 1)], spec.manipulation);
  } else {
    for (auto t : tendencies) {
      r.variants.push_back(dir + "/masks/" + stem + "_" + to_string(t) + ".pgm");
      b.variants.push_back(manipulate(b.scene.mask, t, spec.manipulation));
    }
    r.mask = r.variants[static_cast<std::size_t>(annotator - 1)];
  }
  return b;
}

json record_to_json(const Record& r) {
  json j{{"id", r.id},       {"image", r.image},         {"mask", r.mask},
         {"orig", r.orig},   {"annotator", r.annotator}, {"tendency", r.tendency}};
  if (!r.variants.empty()) j["variants"] = r.variants;
  return j;
}

Record record_from_json(const json& j) {
  Record r;
  r.id = j.at("id").get<int>();
  r.image = j.at("image").get<std::string>();
  r.mask = j.at("mask").get<std::string>();
  r.orig = j.at("orig").get<std::string>();
  r.annotator = j.at("annotator").get<int>();
  r.tendency = j.at("tendency").get<std::string>();
  if (j.contains("variants")) r.variants = j.at("variants").get<std::vector<std::string>>();
  return r;
}

void require_file(const fs::path& root, const std::string& rel) {
  if (!fs::is_regular_file(root / rel)) throw IoError("manifest references missing file '" + (root / rel).string() + "'");
}

}  // namespace

DatasetManifest build_dataset(const fs::path& root, std::uint64_t seed, const DatasetSpec& spec) {
  validate(spec.scene);
  if (spec.n_train <= 0 || spec.n_val <= 0 || spec.n_test <= 0) {
    throw ValueError("dataset: split sizes must be positive");
  }
  const auto tendencies = tendencies_for(spec.n_annotators);
  if (static_cast<int>(spec.scene.domain_tints.size()) < spec.n_annotators) {
    throw ValueError("dataset: scene spec has fewer domain tints than annotators");
  }
  if (spec.scene.height % spec.manipulation.block != 0 || spec.scene.width % spec.manipulation.block != 0) {
    throw ValueError("dataset: image size is not divisible by the simplify block");
  }

  DatasetManifest m;
  m.seed = seed;
  m.n_annotators = spec.n_annotators;
  m.height = spec.scene.height;
  m.width = spec.scene.width;
  m.classes = spec.scene.classes;
  for (auto t : tendencies) m.tendencies.push_back(to_string(t));

  int next_id = 0;
  for (auto split : {Split::kTrain, Split::kVal, Split::kTest}) {
    const int n = split == Split::kTrain ? spec.n_train : split == Split::kVal ? spec.n_val : spec.n_test;
    const int first_id = next_id;
    next_id += n;

    std::vector<Built> built(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
      built[static_cast<std::size_t>(i)] = build_record(seed, spec, tendencies, split, first_id + i, i);
    }

    auto& records = split == Split::kTrain ? m.train : split == Split::kVal ? m.val : m.test;
    for (auto& b : built) {
      write_ppm(root / b.record.image, b.scene.image);
      write_pgm(root / b.record.orig, b.scene.mask);
      if (split == Split::kTrain) {
        write_pgm(root / b.record.mask, b.mask);
      } else {
        for (std::size_t k = 0; k < b.variants.size(); ++k) write_pgm(root / b.record.variants[k], b.variants[k]);
      }
      records.push_back(std::move(b.record));
    }
  }
  write_manifest(root, m);
  return m;
}

void write_manifest(const fs::path& root, const DatasetManifest& m) {
  json j{{"version", m.version},   {"seed", m.seed},   {"n_annotators", m.n_annotators},
         {"height", m.height},     {"width", m.width}, {"classes", m.classes},
         {"tendencies", m.tendencies}};
  for (auto split : {Split::kTrain, Split::kVal, Split::kTest}) {
    json arr = json::array();
    for (const auto& r : m.split(split)) arr.push_back(record_to_json(r));
    j["splits"][to_string(split)] = std::move(arr);
  }
  write_file(root / kManifestName, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path path = root / kManifestName;
  DatasetManifest m;
  try {
    const json j = json::parse(read_file(path));
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw FormatError("unsupported manifest version " + std::to_string(m.version));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_annotators = j.at("n_annotators").get<int>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.classes = j.at("classes").get<int>();
    m.tendencies = j.at("tendencies").get<std::vector<std::string>>();
    for (const auto& r : j.at("splits").at("train")) m.train.push_back(record_from_json(r));
    for (const auto& r : j.at("splits").at("val")) m.val.push_back(record_from_json(r));
    for (const auto& r : j.at("splits").at("test")) m.test.push_back(record_from_json(r));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  if (m.n_annotators < 1 || static_cast<int>(m.tendencies.size()) != m.n_annotators) {
    throw FormatError(path.string() + ": tendencies do not match n_annotators");
  }
  for (const auto& t : m.tendencies) parse_tendency(t);
  std::set<int> ids;
  for (auto split : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const auto& r : m.split(split)) {
      const std::string where = path.string() + ": record " + std::to_string(r.id);
      if (!ids.insert(r.id).second) throw FormatError(where + " appears more than once");
      if (r.annotator < 1 || r.annotator > m.n_annotators) {
        throw FormatError(where + " has annotator " + std::to_string(r.annotator) + " outside 1.." +
                          std::to_string(m.n_annotators));
      }
      if (r.tendency != m.tendencies[static_cast<std::size_t>(r.annotator - 1)]) {
        throw FormatError(where + " tendency does not match its annotator");
      }
      if (split != Split::kTrain && static_cast<int>(r.variants.size()) != m.n_annotators) {
        throw FormatError(where + " must list one mask variant per annotator");
      }
      require_file(root, r.image);
      require_file(root, r.mask);
      require_file(root, r.orig);
      for (const auto& v : r.variants) require_file(root, v);
    }
  }
  return m;
}

std::vector<Sample> load_split(const fs::path& root, const DatasetManifest& m, Split split) {
  const auto check = [&](const Mask& mask, const std::string& rel) {
    if (mask.height != m.height || mask.width != m.width) throw FormatError(rel + ": unexpected mask size");
    for (auto v : mask.labels)
      if (v >= m.classes) throw FormatError(rel + ": label " + std::to_string(v) + " >= class count");
  };
  const auto& records = m.split(split);
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Sample s;
    s.id = r.id;
    s.annotator = r.annotator;
    s.image = read_ppm(root / r.image);
    if (s.image.height != m.height || s.image.width != m.width) throw FormatError(r.image + ": unexpected image size");
    s.mask = read_pgm(root / r.mask);
    check(s.mask, r.mask);
    s.orig = read_pgm(root / r.orig);
    check(s.orig, r.orig);
    for (const auto& v : r.variants) {
      s.variants.push_back(read_pgm(root / v));
      check(s.variants.back(), v);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tax
