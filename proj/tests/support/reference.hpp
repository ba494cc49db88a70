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
#pragma once

// Test-only f64 oracle: direct-from-definition ops in double precision and a
// central finite-difference driver. Nothing here calls into the library's
// numeric code, so gradient checks compare two independent routes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "tax/rng.hpp"
#include "tax/tensor.hpp"

namespace tax::testing {

using Vec = std::vector<double>;

inline Vec to_f64(std::span<const float> v) { return Vec(v.begin(), v.end()); }

inline std::vector<float> random_floats(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

struct Conv {
  int batch, cin, h, w, cout, kh, kw, pad, stride;
  int oh() const { return (h + 2 * pad - kh) / stride + 1; }
  int ow() const { return (w + 2 * pad - kw) / stride + 1; }
};

/// out[b,co,oy,ox] = bias[co] + sum in[b,ci,iy,ix] * w[co,ci,ky,kx]
inline Vec conv2d(const Conv& c, const Vec& in, const Vec& w, const Vec* bias) {
  Vec out(static_cast<std::size_t>(c.batch) * c.cout * c.oh() * c.ow(), 0.0);
  for (int b = 0; b < c.batch; ++b)
    for (int co = 0; co < c.cout; ++co)
      for (int oy = 0; oy < c.oh(); ++oy)
        for (int ox = 0; ox < c.ow(); ++ox) {
          double s = bias ? (*bias)[co] : 0.0;
          for (int ci = 0; ci < c.cin; ++ci)
            for (int ky = 0; ky < c.kh; ++ky)
              for (int kx = 0; kx < c.kw; ++kx) {
                const int iy = oy * c.stride - c.pad + ky, ix = ox * c.stride - c.pad + kx;
                if (iy < 0 || ix < 0 || iy >= c.h || ix >= c.w) continue;
                s += in[((b * c.cin + ci) * c.h + iy) * c.w + ix] *
                     w[((co * c.cin + ci) * c.kh + ky) * c.kw + kx];
              }
          out[((b * c.cout + co) * c.oh() + oy) * c.ow() + ox] = s;
        }
  return out;
}

/// Per-pixel subset selection by brute force: evaluate every subset, then pick.
inline Vec routed_conv2d(const Conv& c, const Vec& in, const std::vector<Vec>& ws,
                         const std::vector<Vec>& bs, const std::vector<std::int32_t>& route) {
  std::vector<Vec> full;
  for (std::size_t k = 0; k < ws.size(); ++k) full.push_back(conv2d(c, in, ws[k], bs.empty() ? nullptr : &bs[k]));
  Vec out(full[0].size());
  const int plane = c.oh() * c.ow();
  for (int b = 0; b < c.batch; ++b)
    for (int co = 0; co < c.cout; ++co)
      for (int p = 0; p < plane; ++p) {
        const auto i = static_cast<std::size_t>((b * c.cout + co) * plane + p);
        out[i] = full[route[b * plane + p] - 1][i];
      }
  return out;
}

inline Vec relu(const Vec& x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::max(0.0, x[i]);
  return y;
}

/// log-softmax along axis 1 of [B,C,P].
inline Vec log_softmax(const Vec& x, int B, int C, int P) {
  Vec y(x.size());
  for (int b = 0; b < B; ++b)
    for (int p = 0; p < P; ++p) {
      double m = -INFINITY;
      for (int c = 0; c < C; ++c) m = std::max(m, x[(b * C + c) * P + p]);
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += std::exp(x[(b * C + c) * P + p] - m);
      for (int c = 0; c < C; ++c) y[(b * C + c) * P + p] = x[(b * C + c) * P + p] - m - std::log(s);
    }
  return y;
}

inline Vec softmax(const Vec& x, int B, int C, int P) {
  Vec y = log_softmax(x, B, C, P);
  for (auto& v : y) v = std::exp(v);
  return y;
}

/// mean over B*P pixels of -sum_c t_c log softmax(x)_c
inline double cross_entropy(const Vec& x, const Vec& t, int B, int C, int P) {
  const Vec lp = log_softmax(x, B, C, P);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s -= t[i] * lp[i];
  return s / (static_cast<double>(B) * P);
}

inline double cosine(const Vec& a, const Vec& b, double eps = 1e-8) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
}

/// avg pool over r x r cells of [planes, H, W].
inline Vec avg_pool(const Vec& x, int planes, int H, int W, int r) {
  const int h = H / r, w = W / r;
  Vec y(static_cast<std::size_t>(planes) * h * w, 0.0);
  for (int p = 0; p < planes; ++p)
    for (int u = 0; u < h; ++u)
      for (int v = 0; v < w; ++v) {
        double s = 0;
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx) s += x[(p * H + u * r + dy) * W + v * r + dx];
        y[(p * h + u) * w + v] = s / (r * r);
      }
  return y;
}

/// conv3x3 + relu + 2x2 avg pool per width, then a conv3x3 projection to dim.
inline Vec encoder_stack(const Vec& x, int B, int cin, int H, int W, const std::vector<int>& widths, int dim,
                           const std::vector<Vec>& ws, const std::vector<Vec>& bs) {
  Vec h = x;
  int c = cin, hh = H, ww = W;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const Conv cv{B, c, hh, ww, widths[l], 3, 3, 1, 1};
    h = avg_pool(relu(conv2d(cv, h, ws[l], &bs[l])), B * widths[l], hh, ww, 2);
    c = widths[l];
    hh /= 2;
    ww /= 2;
  }
  const Conv proj{B, c, hh, ww, dim, 3, 3, 1, 1};
  return conv2d(proj, h, ws.back(), &bs.back());
}

/// Central differences of f at x, one coordinate at a time.
inline Vec finite_differences(const std::function<double(const Vec&)>& f, Vec x, double eps = 1e-3) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// |a-n| / max(|a|, |n|, floor). Components whose magnitude is below the floor
/// are effectively compared with absolute tolerance tol*floor; 1e-4 sits well
/// above the f32 resolution of the analytic gradients under test.
constexpr double kRelErrFloor = 1e-4;

inline double max_rel_error(std::span<const float> analytic, const Vec& numeric,
                            const std::vector<bool>* skip = nullptr) {
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    if (skip && (*skip)[i]) continue;
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), kRelErrFloor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace tax::testing
