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

#include <algorithm>

#include "tax/error.hpp"
#include "tax/optim.hpp"

using namespace tax;

namespace {

Tensor scalar_param(float v) { return Tensor::from({1}, {v}, true); }

void set_grad(Tensor& t, const std::vector<float>& g) {
  auto buf = t.mutable_grad();
  std::copy(g.begin(), g.end(), buf.begin());
}

}  // namespace

TEST_CASE("plain SGD step on a scalar") {
  Tensor theta = scalar_param(1.0f);
  std::vector<ParamGroup> groups{{"g", ParamTag::backbone(), {{"theta", theta}}}};
  OptimState st(0.1f, 0.0f, groups);
  set_grad(theta, {2.0f});
  sgd_step(groups, st, {ParamTag::backbone()});
  CHECK(theta.data()[0] == doctest::Approx(0.8f));
  CHECK(st.velocity.empty());
}

TEST_CASE("momentum recurrence: second update is lr * (g + 0.9 g)") {
  Tensor theta = scalar_param(0.0f);
  std::vector<ParamGroup> groups{{"g", ParamTag::backbone(), {{"theta", theta}}}};
  OptimState st(0.1f, 0.9f, groups);
  REQUIRE(st.velocity.at("theta").size() == 1);
  set_grad(theta, {1.0f});
  sgd_step(groups, st, {ParamTag::backbone()});
  const float after_first = theta.data()[0];
  set_grad(theta, {1.0f});
  sgd_step(groups, st, {ParamTag::backbone()});
  CHECK(after_first - theta.data()[0] == doctest::Approx(0.1 * 1.9));
}

TEST_CASE("inactive groups are bitwise unchanged and every grad is cleared") {
  Tensor a = Tensor::from({2}, {1.f, 2.f}, true), b = Tensor::from({2}, {3.f, 4.f}, true);
  std::vector<ParamGroup> groups{{"a", ParamTag::annotator(1), {{"a", a}}}, {"b", ParamTag::annotator(2), {{"b", b}}}};
  OptimState st(0.5f, 0.9f, groups);
  const auto before_b = checksum(groups[1]);
  set_grad(a, {1.f, 1.f});
  set_grad(b, {1.f, 1.f});
  sgd_step(groups, st, {ParamTag::annotator(1)});
  CHECK(checksum(groups[1]) == before_b);
  CHECK(b.data()[0] == 3.f);
  CHECK(a.data()[0] == doctest::Approx(0.5f));
  CHECK_FALSE(a.has_grad());
  CHECK_FALSE(b.has_grad());
  // Velocity of the inactive group did not move either.
  CHECK(st.velocity.at("b")[0] == 0.f);
}

TEST_CASE("active parameter without a grad is an error") {
  Tensor a = scalar_param(1.f);
  std::vector<ParamGroup> groups{{"a", ParamTag::shared(), {{"a", a}}}};
  OptimState st(0.1f, 0.f, groups);
  CHECK_THROWS_AS(sgd_step(groups, st, {ParamTag::shared()}), Error);
}

TEST_CASE("checksum tracks parameter bytes") {
  Tensor a = Tensor::from({3}, {1.f, 2.f, 3.f}, true);
  ParamGroup g{"a", ParamTag::assigner(), {{"a", a}}};
  const auto h = checksum(g);
  CHECK(checksum(g) == h);
  a.mutable_data()[1] = 2.0000002f;
  CHECK(checksum(g) != h);
}

TEST_CASE("param tags round-trip through strings and order") {
  for (const auto& t : {ParamTag::annotator(3), ParamTag::shared(), ParamTag::backbone(), ParamTag::assigner()}) {
    CHECK(ParamTag::parse(t.str()) == t);
  }
  CHECK(ParamTag::annotator(1) != ParamTag::annotator(2));
  CHECK_THROWS_AS(ParamTag::annotator(0), ValueError);
  CHECK_THROWS_AS(ParamTag::parse("annotator:x"), ValueError);
}
