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
#include "tax/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tax/error.hpp"
#include "tax/kernels.hpp"

namespace tax {

namespace {
thread_local KernelPath g_kernel_path = KernelPath::kParallel;
}

KernelPath kernel_path() { return g_kernel_path; }

ScopedKernelPath::ScopedKernelPath(KernelPath path) : previous_(g_kernel_path) {
  g_kernel_path = path;
}
ScopedKernelPath::~ScopedKernelPath() { g_kernel_path = previous_; }

namespace ops {

namespace {

using detail::TensorImpl;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(t.shape()));
  }
}

void accumulate(TensorImpl& target, std::span<const float> delta) {
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

bool wants_grad(const TensorImpl& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i]->requires_grad;
}

kernels::ConvGeometry conv_geometry(const Tensor& input, const Shape& ks, int padding, int stride,
                                    const char* op) {
  require_rank(input, 4, op, "input");
  if (ks.size() != 4) throw ShapeError(std::string(op) + ": kernel must have rank 4");
  if (ks[1] != input.dim(1)) {
    throw ShapeError(std::string(op) + ": input channels (dim 1) " + std::to_string(input.dim(1)) +
                     " do not match kernel in-channels (dim 1) " + std::to_string(ks[1]));
  }
  if (ks[2] % 2 == 0 || ks[3] % 2 == 0) {
    throw ShapeError(std::string(op) + ": kernel size must be odd, got " + to_string(ks));
  }
  if (padding < 0) throw ValueError(std::string(op) + ": padding must be >= 0");
  if (stride < 1) throw ValueError(std::string(op) + ": stride must be >= 1");
  kernels::ConvGeometry g;
  g.batch = static_cast<int>(input.dim(0));
  g.in_channels = static_cast<int>(input.dim(1));
  g.in_height = static_cast<int>(input.dim(2));
  g.in_width = static_cast<int>(input.dim(3));
  g.out_channels = static_cast<int>(ks[0]);
  g.kernel_h = static_cast<int>(ks[2]);
  g.kernel_w = static_cast<int>(ks[3]);
  g.padding = padding;
  g.stride = stride;
  const int span_h = g.in_height + 2 * padding - g.kernel_h;
  const int span_w = g.in_width + 2 * padding - g.kernel_w;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError(std::string(op) + ": kernel larger than padded input");
  }
  if (span_h % stride != 0) {
    throw ShapeError(std::string(op) + ": output height (dim 2) is not exact: (" +
                     std::to_string(g.in_height) + " + 2*" + std::to_string(padding) + " - " +
                     std::to_string(g.kernel_h) + ") not divisible by stride " +
                     std::to_string(stride));
  }
  if (span_w % stride != 0) {
    throw ShapeError(std::string(op) + ": output width (dim 3) is not exact: (" +
                     std::to_string(g.in_width) + " + 2*" + std::to_string(padding) + " - " +
                     std::to_string(g.kernel_w) + ") not divisible by stride " +
                     std::to_string(stride));
  }
  return g;
}

// Splits shape around `axis` into (outer, channels, inner).
struct AxisSplit {
  std::int64_t outer = 1, channels = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.channels = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Writes log-softmax along the split axis into `out` (double precision).
void log_softmax_into(std::span<const float> x, const AxisSplit& a, std::vector<double>& out) {
  out.resize(x.size());
  for (std::int64_t o = 0; o < a.outer; ++o)
    for (std::int64_t i = 0; i < a.inner; ++i) {
      const std::int64_t base = o * a.channels * a.inner + i;
      double mx = -INFINITY;
      for (std::int64_t c = 0; c < a.channels; ++c) mx = std::max(mx, double(x[base + c * a.inner]));
      double s = 0.0;
      for (std::int64_t c = 0; c < a.channels; ++c) s += std::exp(double(x[base + c * a.inner]) - mx);
      const double lse = mx + std::log(s);
      for (std::int64_t c = 0; c < a.channels; ++c)
        out[base + c * a.inner] = double(x[base + c * a.inner]) - lse;
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding,
              int stride) {
  const auto g = conv_geometry(input, kernel.shape(), padding, stride, "conv2d");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    throw ShapeError("conv2d: bias (dim 0) must have " + std::to_string(g.out_channels) +
                     " entries, got " + to_string(bias.shape()));
  }
  const bool reference = kernel_path() == KernelPath::kReference;
  std::vector<float> out(g.output_size());
  const auto bias_span = bias.defined() ? bias.data() : std::span<const float>{};
  if (reference)
    kernels::serial::conv2d_forward(g, input.data(), kernel.data(), bias_span, out);
  else
    kernels::parallel::conv2d_forward(g, input.data(), kernel.data(), bias_span, out);

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(
      Shape{g.batch, g.out_channels, g.out_height(), g.out_width()}, std::move(out),
      std::move(inputs), [g, has_bias, reference](TensorImpl& self) {
        const auto& gout = self.grad;
        const auto& in = self.inputs[0]->data;
        const auto& w = self.inputs[1]->data;
        if (wants_grad(self, 0)) {
          std::vector<float> gi(g.input_size());
          if (reference)
            kernels::serial::conv2d_grad_input(g, gout, w, gi);
          else
            kernels::parallel::conv2d_grad_input(g, gout, w, gi);
          accumulate(*self.inputs[0], gi);
        }
        const bool gw = wants_grad(self, 1);
        const bool gb = has_bias && wants_grad(self, 2);
        if (gw || gb) {
          std::vector<float> dw(g.weight_size());
          std::vector<float> db(gb ? g.out_channels : 0);
          if (reference)
            kernels::serial::conv2d_grad_weight(g, in, gout, dw, db);
          else
            kernels::parallel::conv2d_grad_weight(g, in, gout, dw, db);
          if (gw) accumulate(*self.inputs[1], dw);
          if (gb) accumulate(*self.inputs[2], db);
        }
      });
}

Tensor routed_conv2d(const Tensor& input, std::span<const Tensor> kernels,
                     std::span<const Tensor> biases, const LabelMap& route, int padding) {
  if (kernels.empty()) throw ValueError("routed_conv2d: kernel set is empty");
  const Shape& ks = kernels[0].shape();
  for (const auto& k : kernels) {
    if (k.shape() != ks) {
      throw ShapeError("routed_conv2d: kernel subsets differ in shape: " + to_string(ks) + " vs " +
                       to_string(k.shape()));
    }
  }
  if (ks.size() != 4 || ks[2] != 3 || ks[3] != 3) {
    throw ShapeError("routed_conv2d: kernel subsets must be [Cout,Cin,3,3], got " + to_string(ks));
  }
  const auto g = conv_geometry(input, ks, padding, 1, "routed_conv2d");
  if (!biases.empty()) {
    if (biases.size() != kernels.size()) {
      throw ShapeError("routed_conv2d: " + std::to_string(biases.size()) + " biases for " +
                       std::to_string(kernels.size()) + " kernel subsets");
    }
    for (const auto& b : biases)
      if (b.rank() != 1 || b.dim(0) != g.out_channels)
        throw ShapeError("routed_conv2d: bias must be [" + std::to_string(g.out_channels) + "]");
  }
  if (route.batch != g.batch || route.height != g.out_height() || route.width != g.out_width() ||
      route.values.size() != static_cast<std::size_t>(g.batch) * g.out_height() * g.out_width()) {
    throw ShapeError("routed_conv2d: route map [" + std::to_string(route.batch) + "," +
                     std::to_string(route.height) + "," + std::to_string(route.width) +
                     "] does not match output [" + std::to_string(g.batch) + "," +
                     std::to_string(g.out_height()) + "," + std::to_string(g.out_width()) + "]");
  }
  const int S = static_cast<int>(kernels.size());
  for (std::size_t i = 0; i < route.values.size(); ++i) {
    const auto v = route.values[i];
    if (v < 1 || v > S) {
      throw ValueError("routed_conv2d: route value " + std::to_string(v) + " at flat index " +
                       std::to_string(i) + " outside {1.." + std::to_string(S) + "}");
    }
  }

  kernels::KernelSubsets subsets;
  for (const auto& k : kernels) subsets.weights.push_back(k.data());
  for (const auto& b : biases) subsets.biases.push_back(b.data());

  const bool reference = kernel_path() == KernelPath::kReference;
  std::vector<float> out(g.output_size());
  if (reference)
    kernels::serial::routed_conv2d_forward(g, input.data(), subsets, route.values, out);
  else
    kernels::parallel::routed_conv2d_forward(g, input.data(), subsets, route.values, out);

  // Inputs: [input, W_1..W_S, b_1..b_S]
  std::vector<Tensor> inputs{input};
  inputs.insert(inputs.end(), kernels.begin(), kernels.end());
  inputs.insert(inputs.end(), biases.begin(), biases.end());
  const bool has_bias = !biases.empty();
  auto route_values = std::make_shared<const std::vector<std::int32_t>>(route.values);
  return make_result(
      Shape{g.batch, g.out_channels, g.out_height(), g.out_width()}, std::move(out),
      std::move(inputs), [g, S, has_bias, reference, route_values](TensorImpl& self) {
        const auto& gout = self.grad;
        kernels::KernelSubsets subs;
        for (int k = 0; k < S; ++k) subs.weights.push_back(self.inputs[1 + k]->data);
        if (wants_grad(self, 0)) {
          std::vector<float> gi(g.input_size());
          if (reference)
            kernels::serial::routed_conv2d_grad_input(g, gout, subs, *route_values, gi);
          else
            kernels::parallel::routed_conv2d_grad_input(g, gout, subs, *route_values, gi);
          accumulate(*self.inputs[0], gi);
        }
        bool any = false;
        for (int k = 0; k < S; ++k) {
          any = any || wants_grad(self, 1 + k) || (has_bias && wants_grad(self, 1 + S + k));
        }
        if (!any) return;
        std::vector<std::vector<float>> dw(S, std::vector<float>(g.weight_size()));
        std::vector<std::vector<float>> db(has_bias ? S : 0, std::vector<float>(g.out_channels));
        kernels::RoutedWeightGrads grads;
        for (auto& v : dw) grads.weights.emplace_back(v);
        for (auto& v : db) grads.biases.emplace_back(v);
        if (reference)
          kernels::serial::routed_conv2d_grad_weight(g, self.inputs[0]->data, gout, *route_values,
                                                     grads);
        else
          kernels::parallel::routed_conv2d_grad_weight(g, self.inputs[0]->data, gout,
                                                       *route_values, grads);
        for (int k = 0; k < S; ++k) {
          if (wants_grad(self, 1 + k)) accumulate(*self.inputs[1 + k], dw[k]);
          if (has_bias && wants_grad(self, 1 + S + k)) accumulate(*self.inputs[1 + S + k], db[k]);
        }
      });
}

Tensor relu(const Tensor& x) {
  const auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return make_result(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    const auto& in = self.inputs[0]->data;
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > 0.0f) gi[i] += self.grad[i];
  });
}

Tensor softmax_channel(const Tensor& x, std::size_t axis) {
  const auto a = split_axis(x.shape(), axis, "softmax_channel");
  std::vector<double> logp;
  log_softmax_into(x.data(), a, logp);
  std::vector<float> out(logp.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(std::exp(logp[i]));
  return make_result(x.shape(), std::move(out), {x}, [a](TensorImpl& self) {
    // dx_c = y_c (g_c - sum_j g_j y_j)
    const auto& y = self.data;
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::int64_t o = 0; o < a.outer; ++o)
      for (std::int64_t i = 0; i < a.inner; ++i) {
        const std::int64_t base = o * a.channels * a.inner + i;
        double dot = 0.0;
        for (std::int64_t c = 0; c < a.channels; ++c)
          dot += double(self.grad[base + c * a.inner]) * double(y[base + c * a.inner]);
        for (std::int64_t c = 0; c < a.channels; ++c) {
          const auto k = base + c * a.inner;
          gi[k] += static_cast<float>(double(y[k]) * (double(self.grad[k]) - dot));
        }
      }
  });
}

Tensor log_softmax_channel(const Tensor& x, std::size_t axis) {
  const auto a = split_axis(x.shape(), axis, "log_softmax_channel");
  std::vector<double> logp;
  log_softmax_into(x.data(), a, logp);
  std::vector<float> out(logp.begin(), logp.end());
  return make_result(x.shape(), std::move(out), {x}, [a](TensorImpl& self) {
    // dx_c = g_c - softmax_c * sum_j g_j
    const auto& lp = self.data;
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::int64_t o = 0; o < a.outer; ++o)
      for (std::int64_t i = 0; i < a.inner; ++i) {
        const std::int64_t base = o * a.channels * a.inner + i;
        double gs = 0.0;
        for (std::int64_t c = 0; c < a.channels; ++c) gs += self.grad[base + c * a.inner];
        for (std::int64_t c = 0; c < a.channels; ++c) {
          const auto k = base + c * a.inner;
          gi[k] += static_cast<float>(double(self.grad[k]) - std::exp(double(lp[k])) * gs);
        }
      }
  });
}

namespace {

// Shared core: target given as a dense distribution (B*K*H*W, K-strided).
Tensor cross_entropy_dense(const Tensor& logits, std::vector<float> target) {
  const auto a = split_axis(logits.shape(), 1, "cross_entropy_map");
  std::vector<double> logp;
  log_softmax_into(logits.data(), a, logp);
  const double pixels = static_cast<double>(a.outer * a.inner);
  double loss = 0.0;
  for (std::int64_t o = 0; o < a.outer; ++o)
    for (std::int64_t i = 0; i < a.inner; ++i) {
      const std::int64_t base = o * a.channels * a.inner + i;
      double px = 0.0;
      for (std::int64_t c = 0; c < a.channels; ++c) {
        const double t = target[base + c * a.inner];
        if (t != 0.0) px -= t * logp[base + c * a.inner];
      }
      loss += px;
    }
  loss /= pixels;
  auto tgt = std::make_shared<const std::vector<float>>(std::move(target));
  auto lp = std::make_shared<const std::vector<double>>(std::move(logp));
  return make_result(Shape{}, {static_cast<float>(loss)}, {logits},
                     [a, pixels, tgt, lp](TensorImpl& self) {
                       // dlogit_c = (softmax_c * sum_j t_j - t_c) / pixels
                       const double gscale = double(self.grad[0]) / pixels;
                       auto& gi = self.inputs[0]->grad_buffer();
                       for (std::int64_t o = 0; o < a.outer; ++o)
                         for (std::int64_t i = 0; i < a.inner; ++i) {
                           const std::int64_t base = o * a.channels * a.inner + i;
                           double ts = 0.0;
                           for (std::int64_t c = 0; c < a.channels; ++c) ts += (*tgt)[base + c * a.inner];
                           for (std::int64_t c = 0; c < a.channels; ++c) {
                             const auto k = base + c * a.inner;
                             gi[k] += static_cast<float>(
                                 gscale * (std::exp((*lp)[k]) * ts - double((*tgt)[k])));
                           }
                         }
                     });
}

}  // namespace

Tensor cross_entropy_map(const Tensor& logits, const Tensor& target) {
  require_rank(logits, 4, "cross_entropy_map", "logits");
  if (target.shape() != logits.shape()) {
    throw ShapeError("cross_entropy_map: target " + to_string(target.shape()) +
                     " does not match logits " + to_string(logits.shape()));
  }
  const auto B = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  const auto t = target.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        double s = 0.0;
        bool negative = false;
        for (std::int64_t c = 0; c < K; ++c) {
          const float v = t[((b * K + c) * H + y) * W + x];
          negative = negative || v < 0.0f || !std::isfinite(v);
          s += v;
        }
        if (negative || std::abs(s - 1.0) > 1e-5) {
          throw ValueError("cross_entropy_map: target at pixel (b=" + std::to_string(b) +
                           ", y=" + std::to_string(y) + ", x=" + std::to_string(x) +
                           ") is not a distribution (sum " + std::to_string(s) + ")");
        }
      }
  return cross_entropy_dense(logits, std::vector<float>(t.begin(), t.end()));
}

Tensor cross_entropy_map(const Tensor& logits, const LabelMap& target) {
  require_rank(logits, 4, "cross_entropy_map", "logits");
  const auto B = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (target.batch != B || target.height != H || target.width != W) {
    throw ShapeError("cross_entropy_map: label map [" + std::to_string(target.batch) + "," +
                     std::to_string(target.height) + "," + std::to_string(target.width) +
                     "] does not match logits " + to_string(logits.shape()));
  }
  std::vector<float> dense(static_cast<std::size_t>(logits.numel()), 0.0f);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const auto c = target.at(static_cast<int>(b), static_cast<int>(y), static_cast<int>(x));
        if (c < 0 || c >= K) {
          throw ValueError("cross_entropy_map: class " + std::to_string(c) + " at pixel (b=" +
                           std::to_string(b) + ", y=" + std::to_string(y) + ", x=" +
                           std::to_string(x) + ") outside {0.." + std::to_string(K - 1) + "}");
        }
        dense[((b * K + c) * H + y) * W + x] = 1.0f;
      }
  return cross_entropy_dense(logits, std::move(dense));
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, float eps) {
  if (a.rank() != 1 || b.rank() != 1 || a.dim(0) != b.dim(0) || a.dim(0) < 1) {
    throw ShapeError("cosine_similarity: expected two vectors of equal length >= 1, got " +
                     to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const auto x = a.data(), y = b.data();
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += double(x[i]) * y[i];
    nx += double(x[i]) * x[i];
    ny += double(y[i]) * y[i];
  }
  nx = std::sqrt(nx);
  ny = std::sqrt(ny);
  const double dx = std::max(nx, double(eps)), dy = std::max(ny, double(eps));
  const double cos = dot / (dx * dy);
  return make_result(Shape{}, {static_cast<float>(cos)}, {a, b},
                     [nx, ny, dx, dy, cos, eps](TensorImpl& self) {
                       const double g = self.grad[0];
                       const auto& x = self.inputs[0]->data;
                       const auto& y = self.inputs[1]->data;
                       // The norm only depends on the vector while it exceeds eps.
                       const bool x_norm_live = nx > eps, y_norm_live = ny > eps;
                       if (wants_grad(self, 0)) {
                         auto& gx = self.inputs[0]->grad_buffer();
                         for (std::size_t i = 0; i < x.size(); ++i) {
                           double d = double(y[i]) / (dx * dy);
                           if (x_norm_live) d -= cos * double(x[i]) / (dx * dx);
                           gx[i] += static_cast<float>(g * d);
                         }
                       }
                       if (wants_grad(self, 1)) {
                         auto& gy = self.inputs[1]->grad_buffer();
                         for (std::size_t i = 0; i < y.size(); ++i) {
                           double d = double(x[i]) / (dx * dy);
                           if (y_norm_live) d -= cos * double(y[i]) / (dy * dy);
                           gy[i] += static_cast<float>(g * d);
                         }
                       }
                     });
}

Tensor avg_downsample(const Tensor& x, int rh, int rw) {
  if (x.rank() < 2) throw ShapeError("avg_downsample: need at least 2 axes");
  if (rh < 1 || rw < 1) throw ValueError("avg_downsample: factors must be >= 1");
  const auto& s = x.shape();
  const auto H = s[s.size() - 2], W = s[s.size() - 1];
  if (H % rh != 0) {
    throw ShapeError("avg_downsample: height " + std::to_string(H) + " not divisible by " +
                     std::to_string(rh));
  }
  if (W % rw != 0) {
    throw ShapeError("avg_downsample: width " + std::to_string(W) + " not divisible by " +
                     std::to_string(rw));
  }
  const auto h = H / rh, w = W / rw;
  const auto planes = x.numel() / (H * W);
  Shape os = s;
  os[os.size() - 2] = h;
  os[os.size() - 1] = w;
  const auto in = x.data();
  std::vector<float> out(static_cast<std::size_t>(planes * h * w));
  const double inv = 1.0 / (rh * rw);
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t u = 0; u < h; ++u)
      for (std::int64_t v = 0; v < w; ++v) {
        double acc = 0.0;
        for (int dy = 0; dy < rh; ++dy)
          for (int dx = 0; dx < rw; ++dx) acc += in[(p * H + u * rh + dy) * W + v * rw + dx];
        out[(p * h + u) * w + v] = static_cast<float>(acc * inv);
      }
  return make_result(os, std::move(out), {x}, [=](TensorImpl& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t u = 0; u < h; ++u)
        for (std::int64_t v = 0; v < w; ++v) {
          const float gv = static_cast<float>(self.grad[(p * h + u) * w + v] * inv);
          for (int dy = 0; dy < rh; ++dy)
            for (int dx = 0; dx < rw; ++dx) gi[(p * H + u * rh + dy) * W + v * rw + dx] += gv;
        }
  });
}

Tensor nearest_upsample(const Tensor& x, int rh, int rw) {
  if (x.rank() < 2) throw ShapeError("nearest_upsample: need at least 2 axes");
  if (rh < 1 || rw < 1) throw ValueError("nearest_upsample: factors must be >= 1");
  const auto& s = x.shape();
  const auto h = s[s.size() - 2], w = s[s.size() - 1];
  const auto H = h * rh, W = w * rw;
  const auto planes = x.numel() / (h * w);
  Shape os = s;
  os[os.size() - 2] = H;
  os[os.size() - 1] = W;
  const auto in = x.data();
  std::vector<float> out(static_cast<std::size_t>(planes * H * W));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx)
        out[(p * H + y) * W + xx] = in[(p * h + y / rh) * w + xx / rw];
  return make_result(os, std::move(out), {x}, [=](TensorImpl& self) {
    auto& gi = self.inputs[0]->grad_buffer();
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t u = 0; u < h; ++u)
        for (std::int64_t v = 0; v < w; ++v) {
          double acc = 0.0;
          for (int dy = 0; dy < rh; ++dy)
            for (int dx = 0; dx < rw; ++dx) acc += self.grad[(p * H + u * rh + dy) * W + v * rw + dx];
          gi[(p * h + u) * w + v] += static_cast<float>(acc);
        }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels", "first input");
  require_rank(b, 4, "concat_channels", "second input");
  for (std::size_t ax : {0u, 2u, 3u}) {
    if (a.dim(ax) != b.dim(ax)) {
      throw ShapeError("concat_channels: dim " + std::to_string(ax) + " differs: " +
                       to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
  }
  const auto B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  std::vector<float> out(static_cast<std::size_t>(B * (Ca + Cb) * plane));
  const auto da = a.data(), db = b.data();
  for (std::int64_t n = 0; n < B; ++n) {
    std::copy_n(da.begin() + n * Ca * plane, Ca * plane, out.begin() + n * (Ca + Cb) * plane);
    std::copy_n(db.begin() + n * Cb * plane, Cb * plane,
                out.begin() + (n * (Ca + Cb) + Ca) * plane);
  }
  return make_result(Shape{B, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                     [=](TensorImpl& self) {
                       for (std::int64_t n = 0; n < B; ++n) {
                         if (wants_grad(self, 0)) {
                           auto& ga = self.inputs[0]->grad_buffer();
                           for (std::int64_t i = 0; i < Ca * plane; ++i)
                             ga[n * Ca * plane + i] += self.grad[n * (Ca + Cb) * plane + i];
                         }
                         if (wants_grad(self, 1)) {
                           auto& gb = self.inputs[1]->grad_buffer();
                           for (std::int64_t i = 0; i < Cb * plane; ++i)
                             gb[n * Cb * plane + i] += self.grad[(n * (Ca + Cb) + Ca) * plane + i];
                         }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (wants_grad(self, k)) accumulate(*self.inputs[k], self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    // Read both inputs before accumulating: a and b may be the same tensor.
    const auto x = self.inputs[0]->data;
    const auto y = self.inputs[1]->data;
    if (wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < y.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  const auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](TensorImpl& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  return make_result(Shape{}, {static_cast<float>(s)}, {x}, [](TensorImpl& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto n = static_cast<double>(x.numel());
  if (n == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (float v : x.data()) s += v;
  return make_result(Shape{}, {static_cast<float>(s / n)}, {x}, [n](TensorImpl& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const float d = static_cast<float>(self.grad[0] / n);
    for (auto& v : g) v += d;
  });
}

}  // namespace ops
}  // namespace tax
