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
#include <algorithm>
#include <array>

#include "tax/error.hpp"
#include "tax/synth.hpp"

namespace tax {

namespace {

void check_se(StructuringElement se) {
  if (se.radius < 1) throw ValueError("structuring element radius must be >= 1");
}

void check_foreground(int cls) {
  if (cls <= 0 || cls > 255) {
    throw ValueError("morphology: class " + std::to_string(cls) + " is not a foreground class");
  }
}

// Calls f(label) for every in-bounds pixel of the window around (y, x).
template <class F>
void for_window(const Mask& m, int y, int x, int r, F&& f) {
  const int y0 = std::max(0, y - r), y1 = std::min(m.height - 1, y + r);
  const int x0 = std::max(0, x - r), x1 = std::min(m.width - 1, x + r);
  for (int yy = y0; yy <= y1; ++yy)
    for (int xx = x0; xx <= x1; ++xx) f(m.at(yy, xx));
}

}  // namespace

Mask dilate(const Mask& mask, int cls, StructuringElement se) {
  check_foreground(cls);
  check_se(se);
  Mask out = mask;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) != 0) continue;
      bool hit = false;
      for_window(mask, y, x, se.radius, [&](std::uint8_t v) { hit = hit || v == cls; });
      if (hit) out.at(y, x) = static_cast<std::uint8_t>(cls);
    }
  return out;
}

Mask erode(const Mask& mask, int cls, StructuringElement se) {
  check_foreground(cls);
  check_se(se);
  Mask out = mask;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) != cls) continue;
      bool full = true;
      for_window(mask, y, x, se.radius, [&](std::uint8_t v) { full = full && v == cls; });
      if (!full) out.at(y, x) = 0;
    }
  return out;
}

Mask dilate_all(const Mask& mask, StructuringElement se) {
  check_se(se);
  Mask out = mask;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) != 0) continue;
      int best = 256;
      for_window(mask, y, x, se.radius, [&](std::uint8_t v) {
        if (v != 0) best = std::min(best, static_cast<int>(v));
      });
      if (best < 256) out.at(y, x) = static_cast<std::uint8_t>(best);
    }
  return out;
}

Mask erode_all(const Mask& mask, StructuringElement se) {
  check_se(se);
  Mask out = mask;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const auto c = mask.at(y, x);
      if (c == 0) continue;
      bool full = true;
      for_window(mask, y, x, se.radius, [&](std::uint8_t v) { full = full && v == c; });
      if (!full) out.at(y, x) = 0;
    }
  return out;
}

Mask simplify(const Mask& mask, int block) {
  if (block < 1) throw ValueError("simplify: block must be >= 1");
  if (mask.height % block != 0 || mask.width % block != 0) {
    throw ValueError("simplify: mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " is not divisible by block " + std::to_string(block));
  }
  Mask out(mask.height, mask.width);
  std::array<int, 256> count{};
  for (int by = 0; by < mask.height; by += block)
    for (int bx = 0; bx < mask.width; bx += block) {
      count.fill(0);
      for (int y = by; y < by + block; ++y)
        for (int x = bx; x < bx + block; ++x) ++count[mask.at(y, x)];
      // max_element returns the first maximum, so ties go to the smaller label.
      const auto label = static_cast<std::uint8_t>(std::max_element(count.begin(), count.end()) - count.begin());
      for (int y = by; y < by + block; ++y)
        for (int x = bx; x < bx + block; ++x) out.at(y, x) = label;
    }
  return out;
}

std::string to_string(Tendency t) {
  switch (t) {
    case Tendency::kDilated: return "dilated";
    case Tendency::kEroded: return "eroded";
    case Tendency::kSimplified: return "simplified";
    case Tendency::kNone: return "none";
  }
  return "?";
}

Tendency parse_tendency(const std::string& name) {
  if (name == "dilated") return Tendency::kDilated;
  if (name == "eroded") return Tendency::kEroded;
  if (name == "simplified") return Tendency::kSimplified;
  if (name == "none") return Tendency::kNone;
  throw ValueError("unknown tendency '" + name + "' (expected dilated, eroded, simplified or none)");
}

std::vector<Tendency> tendencies_for(int n_annotators) {
  if (n_annotators < 1 || n_annotators > 4) {
    throw ValueError("n_annotators must be in [1, 4], got " + std::to_string(n_annotators));
  }
  const std::array<Tendency, 3> manipulated{Tendency::kDilated, Tendency::kEroded, Tendency::kSimplified};
  std::vector<Tendency> out(manipulated.begin(), manipulated.begin() + (n_annotators - 1));
  out.push_back(Tendency::kNone);
  return out;
}

Mask manipulate(const Mask& mask, Tendency t, const ManipulationParams& params) {
  switch (t) {
    case Tendency::kDilated: return dilate_all(mask, {params.radius});
    case Tendency::kEroded: return erode_all(mask, {params.radius});
    case Tendency::kSimplified: return simplify(mask, params.block);
    case Tendency::kNone: return mask;
  }
  return mask;
}

Mask manipulate(const Mask& mask, const std::string& tendency, const ManipulationParams& params) {
  return manipulate(mask, parse_tendency(tendency), params);
}

}  // namespace tax
