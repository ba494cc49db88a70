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
#include <cmath>
#include <numbers>

#include "tax/error.hpp"
#include "tax/rng.hpp"
#include "tax/synth.hpp"

namespace tax {

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kDisc: return "disc";
    case ShapeKind::kRectangle: return "rectangle";
    case ShapeKind::kPolygon: return "polygon";
  }
  return "?";
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "disc") return ShapeKind::kDisc;
  if (name == "rectangle") return ShapeKind::kRectangle;
  if (name == "polygon") return ShapeKind::kPolygon;
  throw ValueError("unknown shape kind '" + name + "' (expected disc, rectangle or polygon)");
}

void validate(const SceneSpec& s) {
  if (s.height <= 0 || s.width <= 0) throw ValueError("scene: image size must be positive");
  if (s.classes < 1 || s.classes > 255) throw ValueError("scene: classes must be in [1, 255]");
  if (static_cast<int>(s.class_colors.size()) < s.classes) {
    throw ValueError("scene: " + std::to_string(s.classes) + " classes but only " +
                     std::to_string(s.class_colors.size()) + " colors");
  }
  if (s.min_shapes < 0 || s.max_shapes < s.min_shapes) {
    throw ValueError("scene: shape count range [" + std::to_string(s.min_shapes) + ", " +
                     std::to_string(s.max_shapes) + "] is empty");
  }
  if (s.max_shapes > 0 && s.kinds.empty()) throw ValueError("scene: no shape kinds enabled");
  if (s.max_shapes > 0 && s.classes < 2) throw ValueError("scene: shapes need a foreground class");
  if (!(s.min_size > 0.0) || s.max_size < s.min_size) throw ValueError("scene: invalid size range");
  if (2.0 * s.max_size > std::min(s.height, s.width)) {
    throw ValueError("scene: max_size does not fit the image");
  }
  if (!(s.noise_sigma >= 0.0)) throw ValueError("scene: noise_sigma must be >= 0");
  if (!(s.domain_tint_strength >= 0.0)) throw ValueError("scene: domain_tint_strength must be >= 0");
}

namespace {

struct Point {
  double x, y;
};

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain; counter-clockwise, no collinear points.
std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_convex(const std::vector<Point>& hull, const Point& p) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  }
  return true;
}

struct Shape {
  ShapeKind kind;
  int cls;
  Point center;
  double rx, ry;                // disc radius / rectangle half extents
  std::vector<Point> polygon;   // absolute coordinates

  bool contains(const Point& p) const {
    switch (kind) {
      case ShapeKind::kDisc: {
        const double dx = p.x - center.x, dy = p.y - center.y;
        return dx * dx + dy * dy <= rx * rx;
      }
      case ShapeKind::kRectangle:
        return std::abs(p.x - center.x) <= rx && std::abs(p.y - center.y) <= ry;
      case ShapeKind::kPolygon:
        return inside_convex(polygon, p);
    }
    return false;
  }
};

Shape draw_shape(Rng& rng, const SceneSpec& spec, int cls) {
  Shape s;
  s.kind = spec.kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(spec.kinds.size()) - 1))];
  s.cls = cls;
  s.rx = rng.uniform(spec.min_size, spec.max_size);
  s.ry = s.kind == ShapeKind::kRectangle ? rng.uniform(spec.min_size, spec.max_size) : s.rx;
  // Keep most of the shape inside the frame: centres stay half a size from edges.
  const double mx = 0.5 * s.rx, my = 0.5 * s.ry;
  s.center = {rng.uniform(mx, spec.width - mx), rng.uniform(my, spec.height - my)};
  if (s.kind == ShapeKind::kPolygon) {
    const int n = rng.uniform_int(5, 8);
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double radius = s.rx * rng.uniform(0.6, 1.0);
      pts.push_back({s.center.x + radius * std::cos(angle), s.center.y + radius * std::sin(angle)});
    }
    s.polygon = convex_hull(std::move(pts));
    if (s.polygon.size() < 3) s.kind = ShapeKind::kDisc;  // degenerate draw
  }
  return s;
}

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec, int domain) {
  validate(spec);
  if (domain < 0 || (domain > 0 && domain > static_cast<int>(spec.domain_tints.size()))) {
    throw ValueError("scene: no tint configured for domain " + std::to_string(domain));
  }
  Rng rng(seed);

  const int n_shapes = rng.uniform_int(spec.min_shapes, spec.max_shapes);
  const int n_fg = spec.classes - 1;
  std::vector<int> classes;
  if (n_shapes >= n_fg) {
    for (int c = 1; c <= n_fg; ++c) classes.push_back(c);
  }
  while (static_cast<int>(classes.size()) < n_shapes) classes.push_back(rng.uniform_int(1, n_fg));
  rng.shuffle(classes);

  std::vector<Shape> shapes;
  for (int c : classes) shapes.push_back(draw_shape(rng, spec, c));

  Scene scene{RgbImage(spec.height, spec.width), Mask(spec.height, spec.width, 0)};
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Point p{x + 0.5, y + 0.5};
      for (const auto& s : shapes) {  // later shapes occlude earlier ones
        if (s.contains(p)) scene.mask.at(y, x) = static_cast<std::uint8_t>(s.cls);
      }
    }
  }

  Color tint{0, 0, 0};
  if (domain > 0) tint = spec.domain_tints[static_cast<std::size_t>(domain - 1)];
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const auto& color = spec.class_colors[scene.mask.at(y, x)];
      auto* px = scene.image.at(y, x);
      for (int ch = 0; ch < 3; ++ch) {
        px[ch] = clamp_u8(color[ch] + spec.domain_tint_strength * tint[ch] + spec.noise_sigma * rng.normal());
      }
    }
  }
  return scene;
}

}  // namespace tax
