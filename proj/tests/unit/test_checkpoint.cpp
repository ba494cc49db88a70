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

#include <cstring>

#include "fixtures.hpp"
#include "tax/checkpoint.hpp"
#include "tax/error.hpp"
#include "tax/image.hpp"
#include "tax/model.hpp"

using namespace tax;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.stage = "tax";
  c.config = {{"lr", 0.02}, {"nested", {{"k", "v"}}}};
  c.state = {{"epoch", 3}, {"order", {3, 1, 2}}};
  c.tensors.push_back({"a", {2, 2}, {1.f, -2.f, 3.5f, 1e-30f}});
  c.tensors.push_back({"b", {3}, {0.f, -0.f, 7.f}});
  c.tensors.push_back({"empty", {0}, {}});
  return c;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("encode/decode round-trip is lossless and byte-stable") {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = encode_checkpoint(c);
  CHECK(bytes.rfind("TAXCKPT1", 0) == 0);
  const Checkpoint d = decode_checkpoint(bytes);
  CHECK(d == c);
  CHECK(encode_checkpoint(d) == bytes);
  CHECK(std::signbit(d.find("b")->values[1]));
  CHECK(d.find("missing") == nullptr);
}

TEST_CASE("save -> load -> save produces identical files") {
  testing::TempDir dir("ckpt");
  SegModel m(testing::tiny_unet(), 2, 4);
  Checkpoint c;
  c.stage = "tax";
  store_parameters(c, m.parameters());
  save_checkpoint(dir / "a.ckpt", c);
  save_checkpoint(dir / "b.ckpt", load_checkpoint(dir / "a.ckpt"));
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
}

TEST_CASE("corruption is reported with a byte offset") {
  const std::string good = encode_checkpoint(sample_checkpoint());
  std::string bad = good;
  bad[0] = 'X';
  CHECK(message_of([&] { decode_checkpoint(bad); }).find("at byte offset 0") != std::string::npos);
  CHECK(message_of([&] { decode_checkpoint(good.substr(0, 12)); }).find("at byte offset 12") != std::string::npos);
  CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 4)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(good + "xx"), FormatError);

  Checkpoint v = sample_checkpoint();
  v.version = 2;
  CHECK(message_of([&] { decode_checkpoint(encode_checkpoint(v)); }).find("version") != std::string::npos);
}

TEST_CASE("restore validates every tensor before writing anything") {
  SegModel src(testing::tiny_unet(), 0, 1), dst(testing::tiny_unet(), 0, 2);
  Checkpoint c;
  store_parameters(c, src.parameters(), "model/");
  const auto dst_before = checksum(dst.groups()[0]);

  Checkpoint missing = c;
  missing.tensors.pop_back();
  CHECK_THROWS_AS(restore_parameters(missing, dst.parameters(), "model/"), FormatError);
  CHECK(checksum(dst.groups()[0]) == dst_before);

  Checkpoint wrong_shape = c;
  wrong_shape.tensors.back().shape = {static_cast<std::int64_t>(wrong_shape.tensors.back().values.size()), 1};
  CHECK_THROWS_AS(restore_parameters(wrong_shape, dst.parameters(), "model/"), ShapeError);
  CHECK(checksum(dst.groups()[0]) == dst_before);

  restore_parameters(c, dst.parameters(), "model/");
  CHECK(checksum(dst.groups()[0]) == checksum(src.groups()[0]));
}

TEST_CASE("optimizer velocity round-trips") {
  SegModel m(testing::tiny_unet(), 0, 1);
  OptimState a(0.1f, 0.9f, m.groups()), b(0.1f, 0.9f, m.groups());
  for (auto& [name, v] : a.velocity)
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i) * 0.5f;
  Checkpoint c;
  store_optimizer(c, a);
  restore_optimizer(c, b);
  CHECK(a.velocity == b.velocity);
}

TEST_CASE("loading a missing or foreign file fails cleanly") {
  testing::TempDir dir("ckpt-bad");
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), IoError);
  write_file(dir / "x.ckpt", "P5\n1 1\n255\n\0");
  CHECK_THROWS_AS(load_checkpoint(dir / "x.ckpt"), FormatError);
}
