#pragma once

// Shared helpers for tests that touch the file system or need a small
// dataset.

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "tax/config.hpp"
#include "tax/synth.hpp"

namespace tax::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("taxseg-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// 16x16 scenes, small splits; the unet and assigner below fit this size.
inline DatasetSpec tiny_dataset_spec(int n_annotators = 4, int n_train = 16, int n_test = 8) {
  DatasetSpec d;
  d.scene.height = d.scene.width = 16;
  d.scene.min_size = 3.0;
  d.scene.max_size = 6.0;
  d.manipulation.radius = 1;
  d.manipulation.block = 4;
  d.n_annotators = n_annotators;
  d.n_train = n_train;
  d.n_val = 4;
  d.n_test = n_test;
  return d;
}

inline UNetConfig tiny_unet(int classes = 3) {
  UNetConfig c;
  c.base_width = 4;
  c.depth = 2;
  c.feature_width = 4;
  c.classes = classes;
  return c;
}

inline AssignerConfig tiny_assigner(int n_annotators = 4) {
  AssignerConfig c;
  c.encoder.widths = {4, 8};
  c.encoder.feature_dim = 6;
  c.n_annotators = n_annotators;
  c.prototypes_per_group = 2;
  return c;
}

inline StageConfig tiny_stage(Stage s, int epochs = 2, std::uint64_t seed = 11) {
  StageConfig c;
  c.stage = s;
  c.epochs = epochs;
  c.batch_size = 4;
  c.learning_rate = s == Stage::kAssigner ? 0.01 : 0.02;
  c.momentum = 0.9;
  c.seed = seed;
  return c;
}

}  // namespace tax::testing
