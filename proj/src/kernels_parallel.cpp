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

// OpenMP kernels. Work is split over independent output planes (or weight
// rows), and each output element is owned by exactly one thread, so results do
// not depend on the thread count.

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tax/kernels.hpp"

namespace tax::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

namespace {

// Range of output columns [lo, hi) whose input column ox*stride - pad + k is valid.
struct Span1 {
  int lo, hi;
};

Span1 valid_outputs(int k, int pad, int stride, int in_len, int out_len) {
  // ox*stride >= pad - k  and  ox*stride <= in_len - 1 + pad - k
  const int need_lo = pad - k;
  int lo = need_lo <= 0 ? 0 : (need_lo + stride - 1) / stride;
  const int need_hi = in_len - 1 + pad - k;
  int hi = need_hi < 0 ? 0 : std::min(out_len, need_hi / stride + 1);
  lo = std::min(lo, hi);
  return {lo, hi};
}

// acc[ox] += w * src[ox*stride + offset] for ox in [lo, hi).
inline void axpy_row(double* acc, double w, const float* src, int offset, int stride, Span1 r) {
  if (stride == 1) {
    for (int ox = r.lo; ox < r.hi; ++ox) acc[ox] += w * static_cast<double>(src[ox + offset]);
  } else {
    for (int ox = r.lo; ox < r.hi; ++ox)
      acc[ox] += w * static_cast<double>(src[ox * stride + offset]);
  }
}

constexpr int kColChunk = 64;

// Rows of the im2col matrix for pixels [p0, p0+n) of image b: col[p][(ci,ky,kx)].
void im2col_chunk(const ConvGeometry& g, const float* image, int p0, int n, float* col) {
  const int ow = g.out_width();
  const int J = g.in_channels * g.kernel_h * g.kernel_w;
  for (int p = 0; p < n; ++p) {
    const int oy = (p0 + p) / ow, ox = (p0 + p) % ow;
    float* row = col + static_cast<std::size_t>(p) * J;
    int j = 0;
    for (int ci = 0; ci < g.in_channels; ++ci) {
      const float* plane = image + static_cast<std::size_t>(ci) * g.in_height * g.in_width;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        const int iy = oy * g.stride - g.padding + ky;
        for (int kx = 0; kx < g.kernel_w; ++kx, ++j) {
          const int ix = ox * g.stride - g.padding + kx;
          row[j] = (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width)
                       ? 0.0f
                       : plane[iy * g.in_width + ix];
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output) {
  const int oh = g.out_height(), ow = g.out_width();
  const int planes = g.batch * g.out_channels;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int bc = 0; bc < planes; ++bc) {
    const int b = bc / g.out_channels, co = bc % g.out_channels;
    std::vector<double> acc(out_plane, bias.empty() ? 0.0 : static_cast<double>(bias[co]));
    for (int ci = 0; ci < g.in_channels; ++ci) {
      const float* src = input.data() + (static_cast<std::size_t>(b) * g.in_channels + ci) * in_plane;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const double w = weight[((static_cast<std::size_t>(co) * g.in_channels + ci) * g.kernel_h +
                                   ky) * g.kernel_w + kx];
          const Span1 cols = valid_outputs(kx, g.padding, g.stride, g.in_width, ow);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.in_height) continue;
            axpy_row(acc.data() + static_cast<std::size_t>(oy) * ow, w, src + iy * g.in_width,
                     kx - g.padding, g.stride, cols);
          }
        }
      }
    }
    float* dst = output.data() + static_cast<std::size_t>(bc) * out_plane;
    for (std::size_t i = 0; i < out_plane; ++i) dst[i] = static_cast<float>(acc[i]);
  }
}

void conv2d_grad_input(const ConvGeometry& g, std::span<const float> grad_output,
                       std::span<const float> weight, std::span<float> grad_input) {
  const int oh = g.out_height(), ow = g.out_width();
  const int planes = g.batch * g.in_channels;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int bc = 0; bc < planes; ++bc) {
    const int b = bc / g.in_channels, ci = bc % g.in_channels;
    std::vector<double> acc(in_plane, 0.0);
    for (int co = 0; co < g.out_channels; ++co) {
      const float* gsrc =
          grad_output.data() + (static_cast<std::size_t>(b) * g.out_channels + co) * out_plane;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const double w = weight[((static_cast<std::size_t>(co) * g.in_channels + ci) * g.kernel_h +
                                   ky) * g.kernel_w + kx];
          const Span1 cols = valid_outputs(kx, g.padding, g.stride, g.in_width, ow);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.in_height) continue;
            double* arow = acc.data() + static_cast<std::size_t>(iy) * g.in_width;
            const float* grow = gsrc + static_cast<std::size_t>(oy) * ow;
            const int off = kx - g.padding;
            if (g.stride == 1) {
              for (int ox = cols.lo; ox < cols.hi; ++ox)
                arow[ox + off] += w * static_cast<double>(grow[ox]);
            } else {
              for (int ox = cols.lo; ox < cols.hi; ++ox)
                arow[ox * g.stride + off] += w * static_cast<double>(grow[ox]);
            }
          }
        }
      }
    }
    float* dst = grad_input.data() + static_cast<std::size_t>(bc) * in_plane;
    for (std::size_t i = 0; i < in_plane; ++i) dst[i] = static_cast<float>(acc[i]);
  }
}

void conv2d_grad_weight(const ConvGeometry& g, std::span<const float> input,
                        std::span<const float> grad_output, std::span<float> grad_weight,
                        std::span<float> grad_bias) {
  const int P = g.out_height() * g.out_width();
  const int J = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t in_image = static_cast<std::size_t>(g.in_channels) * g.in_height * g.in_width;
  std::vector<double> acc(static_cast<std::size_t>(g.out_channels) * J, 0.0);
  std::vector<float> col(static_cast<std::size_t>(kColChunk) * J);
  for (int b = 0; b < g.batch; ++b) {
    for (int p0 = 0; p0 < P; p0 += kColChunk) {
      const int n = std::min(kColChunk, P - p0);
      im2col_chunk(g, input.data() + b * in_image, p0, n, col.data());
#pragma omp parallel for schedule(static)
      for (int co = 0; co < g.out_channels; ++co) {
        double* a = acc.data() + static_cast<std::size_t>(co) * J;
        const float* gsrc = grad_output.data() + (static_cast<std::size_t>(b) * g.out_channels + co) * P + p0;
        for (int p = 0; p < n; ++p) {
          const double gv = gsrc[p];
          const float* c = col.data() + static_cast<std::size_t>(p) * J;
          for (int j = 0; j < J; ++j) a[j] += gv * static_cast<double>(c[j]);
        }
      }
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) grad_weight[i] = static_cast<float>(acc[i]);

  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.out_channels; ++co) {
      double s = 0.0;
      for (int b = 0; b < g.batch; ++b) {
        const float* gsrc = grad_output.data() + (static_cast<std::size_t>(b) * g.out_channels + co) * P;
        for (int p = 0; p < P; ++p) s += static_cast<double>(gsrc[p]);
      }
      grad_bias[co] = static_cast<float>(s);
    }
  }
}

void routed_conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                           const KernelSubsets& subsets, std::span<const std::int32_t> route,
                           std::span<float> output) {
  const int oh = g.out_height(), ow = g.out_width();
  const int S = subsets.count();
  const int planes = g.batch * g.out_channels;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t k_off_ci = static_cast<std::size_t>(g.kernel_h) * g.kernel_w;
#pragma omp parallel for schedule(static)
  for (int bc = 0; bc < planes; ++bc) {
    const int b = bc / g.out_channels, co = bc % g.out_channels;
    const std::int32_t* r = route.data() + static_cast<std::size_t>(b) * out_plane;
    std::vector<double> acc(out_plane, 0.0);
    if (!subsets.biases.empty()) {
      for (std::size_t p = 0; p < out_plane; ++p) acc[p] = subsets.biases[r[p] - 1][co];
    }
    std::vector<double> wtab(S);
    for (int ci = 0; ci < g.in_channels; ++ci) {
      const float* src = input.data() + (static_cast<std::size_t>(b) * g.in_channels + ci) * in_plane;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const std::size_t widx =
              (static_cast<std::size_t>(co) * g.in_channels + ci) * k_off_ci + ky * g.kernel_w + kx;
          for (int k = 0; k < S; ++k) wtab[k] = subsets.weights[k][widx];
          const Span1 cols = valid_outputs(kx, g.padding, g.stride, g.in_width, ow);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.in_height) continue;
            double* arow = acc.data() + static_cast<std::size_t>(oy) * ow;
            const std::int32_t* rrow = r + static_cast<std::size_t>(oy) * ow;
            const float* srow = src + static_cast<std::size_t>(iy) * g.in_width;
            for (int ox = cols.lo; ox < cols.hi; ++ox)
              arow[ox] += wtab[rrow[ox] - 1] *
                          static_cast<double>(srow[ox * g.stride + kx - g.padding]);
          }
        }
      }
    }
    float* dst = output.data() + static_cast<std::size_t>(bc) * out_plane;
    for (std::size_t i = 0; i < out_plane; ++i) dst[i] = static_cast<float>(acc[i]);
  }
}

void routed_conv2d_grad_input(const ConvGeometry& g, std::span<const float> grad_output,
                              const KernelSubsets& subsets, std::span<const std::int32_t> route,
                              std::span<float> grad_input) {
  const int oh = g.out_height(), ow = g.out_width();
  const int S = subsets.count();
  const int planes = g.batch * g.in_channels;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_height) * g.in_width;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int bc = 0; bc < planes; ++bc) {
    const int b = bc / g.in_channels, ci = bc % g.in_channels;
    const std::int32_t* r = route.data() + static_cast<std::size_t>(b) * out_plane;
    std::vector<double> acc(in_plane, 0.0);
    std::vector<double> wtab(S);
    for (int co = 0; co < g.out_channels; ++co) {
      const float* gsrc =
          grad_output.data() + (static_cast<std::size_t>(b) * g.out_channels + co) * out_plane;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const std::size_t widx =
              ((static_cast<std::size_t>(co) * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx;
          for (int k = 0; k < S; ++k) wtab[k] = subsets.weights[k][widx];
          const Span1 cols = valid_outputs(kx, g.padding, g.stride, g.in_width, ow);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.in_height) continue;
            double* arow = acc.data() + static_cast<std::size_t>(iy) * g.in_width;
            const float* grow = gsrc + static_cast<std::size_t>(oy) * ow;
            const std::int32_t* rrow = r + static_cast<std::size_t>(oy) * ow;
            const int off = kx - g.padding;
            for (int ox = cols.lo; ox < cols.hi; ++ox)
              arow[ox * g.stride + off] += wtab[rrow[ox] - 1] * static_cast<double>(grow[ox]);
          }
        }
      }
    }
    float* dst = grad_input.data() + static_cast<std::size_t>(bc) * in_plane;
    for (std::size_t i = 0; i < in_plane; ++i) dst[i] = static_cast<float>(acc[i]);
  }
}

void routed_conv2d_grad_weight(const ConvGeometry& g, std::span<const float> input,
                               std::span<const float> grad_output,
                               std::span<const std::int32_t> route, const RoutedWeightGrads& grads) {
  const int P = g.out_height() * g.out_width();
  const int J = g.in_channels * g.kernel_h * g.kernel_w;
  const int S = static_cast<int>(grads.weights.size());
  const std::size_t in_image = static_cast<std::size_t>(g.in_channels) * g.in_height * g.in_width;
  const std::size_t per_subset = static_cast<std::size_t>(g.out_channels) * J;
  std::vector<double> acc(per_subset * S, 0.0);
  std::vector<float> col(static_cast<std::size_t>(kColChunk) * J);
  for (int b = 0; b < g.batch; ++b) {
    const std::int32_t* r = route.data() + static_cast<std::size_t>(b) * P;
    for (int p0 = 0; p0 < P; p0 += kColChunk) {
      const int n = std::min(kColChunk, P - p0);
      im2col_chunk(g, input.data() + b * in_image, p0, n, col.data());
#pragma omp parallel for schedule(static)
      for (int co = 0; co < g.out_channels; ++co) {
        const float* gsrc = grad_output.data() + (static_cast<std::size_t>(b) * g.out_channels + co) * P + p0;
        for (int p = 0; p < n; ++p) {
          double* a = acc.data() + (r[p0 + p] - 1) * per_subset + static_cast<std::size_t>(co) * J;
          const double gv = gsrc[p];
          const float* c = col.data() + static_cast<std::size_t>(p) * J;
          for (int j = 0; j < J; ++j) a[j] += gv * static_cast<double>(c[j]);
        }
      }
    }
  }
  for (int k = 0; k < S; ++k)
    for (std::size_t i = 0; i < per_subset; ++i)
      grads.weights[k][i] = static_cast<float>(acc[k * per_subset + i]);

  if (!grads.biases.empty()) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.out_channels; ++co) {
      std::vector<double> s(S, 0.0);
      for (int b = 0; b < g.batch; ++b) {
        const std::int32_t* r = route.data() + static_cast<std::size_t>(b) * P;
        const float* gsrc = grad_output.data() + (static_cast<std::size_t>(b) * g.out_channels + co) * P;
        for (int p = 0; p < P; ++p) s[r[p] - 1] += static_cast<double>(gsrc[p]);
      }
      for (int k = 0; k < S; ++k) grads.biases[k][co] = static_cast<float>(s[k]);
    }
  }
}

}  // namespace parallel
}  // namespace tax::kernels
