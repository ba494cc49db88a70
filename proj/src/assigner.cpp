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
#include "tax/assigner.hpp"

#include <cmath>
#include <cstring>

#include "tax/error.hpp"

namespace tax {

using detail::TensorImpl;

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.widths.empty() || cfg.feature_dim < 1 || cfg.in_channels < 1) {
    throw ValueError("encoder: needs at least one level and a positive feature dim");
  }
  Rng rng(seed);
  int in = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    layers_.push_back(make_conv("assigner.enc" + std::to_string(i), in, cfg.widths[i], 3, rng, true, true));
    in = cfg.widths[i];
  }
  layers_.push_back(make_conv("assigner.proj", in, cfg.feature_dim, 3, rng, false, false));
}

Tensor Encoder::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels) {
    throw ShapeError("encoder: expected [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                     to_string(images.shape()));
  }
  if (images.dim(2) % cfg_.stride() != 0 || images.dim(3) % cfg_.stride() != 0) {
    throw ShapeError("encoder: input " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                     " is not divisible by stride " + std::to_string(cfg_.stride()));
  }
  Tensor x = images;
  for (const auto& l : layers_) x = l.forward(x);
  return x;
}

std::vector<float> PrototypeBank::column(int j) const {
  const int d = dim(), n = count();
  const auto p = prototypes.data();
  std::vector<float> out(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i) * n + j];
  return out;
}

namespace {

void draw_unit_column(std::span<float> p, int n, int j, int d, Rng& rng) {
  double norm = 0.0;
  std::vector<double> v(static_cast<std::size_t>(d));
  while (norm < 1e-6) {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
  }
  for (int i = 0; i < d; ++i) p[static_cast<std::size_t>(i) * n + j] = static_cast<float>(v[i] / norm);
}

double column_norm(std::span<const float> p, int n, int j, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += double(p[static_cast<std::size_t>(i) * n + j]) * p[static_cast<std::size_t>(i) * n + j];
  return std::sqrt(s);
}

}  // namespace

PrototypeBank make_prototype_bank(int dim, int groups, int per_group, Rng& rng) {
  if (dim < 1 || groups < 2 || per_group < 1) throw ValueError("prototype bank: invalid dimensions");
  PrototypeBank bank;
  bank.groups = groups;
  bank.per_group = per_group;
  const int n = groups * per_group;
  bank.prototypes = Tensor::zeros({dim, n}, true);
  auto p = bank.prototypes.mutable_data();
  for (int j = 0; j < n; ++j) draw_unit_column(p, n, j, dim, rng);
  return bank;
}

int reseed_degenerate(PrototypeBank& bank, std::uint64_t seed) {
  const int d = bank.dim(), n = bank.count();
  auto p = bank.prototypes.mutable_data();
  int redrawn = 0;
  for (int j = 0; j < n; ++j) {
    if (column_norm(p, n, j, d) >= 1e-8) continue;
    Rng rng(seed ^ (static_cast<std::uint64_t>(j) << 32));
    draw_unit_column(p, n, j, d, rng);
    ++redrawn;
  }
  return redrawn;
}

Scores score_prototypes(const Tensor& features, const PrototypeBank& bank, float eps) {
  if (features.rank() != 4) throw ShapeError("score: expected [B,d,h,w] features, got " + to_string(features.shape()));
  const int d = bank.dim(), n = bank.count(), G = bank.groups, Q = bank.per_group;
  if (features.dim(1) != d) {
    throw ShapeError("score: feature dim " + std::to_string(features.dim(1)) + " does not match bank dim " +
                     std::to_string(d));
  }
  const int B = static_cast<int>(features.dim(0)), h = static_cast<int>(features.dim(2)),
            w = static_cast<int>(features.dim(3));
  const int cells = h * w;
  const auto f = features.data();
  const auto p = bank.prototypes.data();

  std::vector<double> pnorm(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) pnorm[j] = column_norm(p, n, j, d);

  Scores out;
  out.batch = B;
  out.height = h;
  out.width = w;
  out.winner.assign(static_cast<std::size_t>(B) * cells, 0);
  std::vector<float> soft(static_cast<std::size_t>(B) * G * cells);
  // Per (b, cell, group): winning prototype, its cosine and feature norm, kept for backward.
  auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(B) * G * cells);
  auto fnorm = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * cells);
  auto best = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * G * cells);

  std::vector<double> dots(static_cast<std::size_t>(n));
  for (int b = 0; b < B; ++b) {
    const float* fb = f.data() + static_cast<std::size_t>(b) * d * cells;
    for (int c = 0; c < cells; ++c) {
      double nf = 0.0;
      std::fill(dots.begin(), dots.end(), 0.0);
      for (int i = 0; i < d; ++i) {
        const double fi = fb[static_cast<std::size_t>(i) * cells + c];
        nf += fi * fi;
        const float* prow = p.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) dots[j] += fi * prow[j];
      }
      nf = std::sqrt(nf);
      (*fnorm)[static_cast<std::size_t>(b) * cells + c] = nf;
      const double df = std::max(nf, double(eps));
      // Group argmax on the stored f32 scores so it agrees with hard_mask.
      int overall_group = 0;
      float overall = -INFINITY;
      for (int k = 0; k < G; ++k) {
        int arg = k * Q;
        double top = -INFINITY;
        for (int q = 0; q < Q; ++q) {
          const int j = k * Q + q;
          const double cos = dots[j] / (df * std::max(pnorm[j], double(eps)));
          if (cos > top) {
            top = cos;
            arg = j;
          }
        }
        const std::size_t idx = (static_cast<std::size_t>(b) * G + k) * cells + c;
        soft[idx] = static_cast<float>(top);
        (*argmax)[idx] = arg;
        (*best)[idx] = top;
        if (soft[idx] > overall) {
          overall = soft[idx];
          overall_group = k;
        }
      }
      out.winner[static_cast<std::size_t>(b) * cells + c] =
          (*argmax)[(static_cast<std::size_t>(b) * G + overall_group) * cells + c];
    }
  }

  out.soft = make_result(
      {B, G, h, w}, std::move(soft), {features, bank.prototypes},
      [=, pnorm = std::move(pnorm)](TensorImpl& self) {
        const auto& fv = self.inputs[0]->data;
        const auto& pv = self.inputs[1]->data;
        const bool want_f = self.inputs[0]->requires_grad, want_p = self.inputs[1]->requires_grad;
        std::vector<float>* gf = want_f ? &self.inputs[0]->grad_buffer() : nullptr;
        std::vector<float>* gp = want_p ? &self.inputs[1]->grad_buffer() : nullptr;
        for (int b = 0; b < B; ++b)
          for (int k = 0; k < G; ++k)
            for (int c = 0; c < cells; ++c) {
              const std::size_t idx = (static_cast<std::size_t>(b) * G + k) * cells + c;
              const double g = self.grad[idx];
              if (g == 0.0) continue;
              const int j = (*argmax)[idx];
              const double cos = (*best)[idx];
              const double nf = (*fnorm)[static_cast<std::size_t>(b) * cells + c], np = pnorm[j];
              const double df = std::max(nf, double(eps)), dp = std::max(np, double(eps));
              const std::size_t fbase = static_cast<std::size_t>(b) * d * cells + c;
              for (int i = 0; i < d; ++i) {
                const double fi = fv[fbase + static_cast<std::size_t>(i) * cells];
                const double pi = pv[static_cast<std::size_t>(i) * n + j];
                if (gf) {
                  double dd = pi / (df * dp);
                  if (nf > eps) dd -= cos * fi / (df * df);
                  (*gf)[fbase + static_cast<std::size_t>(i) * cells] += static_cast<float>(g * dd);
                }
                if (gp) {
                  double dd = fi / (df * dp);
                  if (np > eps) dd -= cos * pi / (dp * dp);
                  (*gp)[static_cast<std::size_t>(i) * n + j] += static_cast<float>(g * dd);
                }
              }
            }
      });
  return out;
}

Mask hard_mask(std::span<const float> soft, int groups, int h, int w, int rh, int rw) {
  const int cells = h * w;
  if (soft.size() != static_cast<std::size_t>(groups) * cells) throw ShapeError("hard_mask: soft size mismatch");
  Mask out(h * rh, w * rw);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      const int c = u * w + v;
      int arg = 0;
      for (int k = 1; k < groups; ++k)
        if (soft[static_cast<std::size_t>(k) * cells + c] > soft[static_cast<std::size_t>(arg) * cells + c]) arg = k;
      for (int y = u * rh; y < (u + 1) * rh; ++y)
        for (int x = v * rw; x < (v + 1) * rw; ++x) out.at(y, x) = static_cast<std::uint8_t>(arg + 1);
    }
  return out;
}

std::vector<float> build_pseudo_mask(const Mask& u, int annotator, int groups, int rh, int rw) {
  if (annotator < 1 || annotator >= groups) {
    throw ValueError("pseudo mask: annotator " + std::to_string(annotator) + " outside 1.." +
                     std::to_string(groups - 1));
  }
  if (rh < 1 || rw < 1 || u.height % rh != 0 || u.width % rw != 0) {
    throw ShapeError("pseudo mask: uncertainty map is not divisible by the cell size");
  }
  const int h = u.height / rh, w = u.width / rw, cells = h * w;
  const double area = static_cast<double>(rh) * rw;
  std::vector<float> out(static_cast<std::size_t>(groups) * cells, 0.0f);
  for (int cu = 0; cu < h; ++cu)
    for (int cv = 0; cv < w; ++cv) {
      int uncertain = 0;
      for (int y = cu * rh; y < (cu + 1) * rh; ++y)
        for (int x = cv * rw; x < (cv + 1) * rw; ++x) uncertain += u.at(y, x) != 0;
      const int c = cu * w + cv;
      out[static_cast<std::size_t>(annotator - 1) * cells + c] = static_cast<float>(uncertain / area);
      out[static_cast<std::size_t>(groups - 1) * cells + c] = static_cast<float>((area - uncertain) / area);
    }
  return out;
}

Tensor assignment_loss(const Tensor& soft, const Tensor& pseudo, float temperature) {
  if (!(temperature > 0.0f)) throw ValueError("assignment loss: temperature must be positive");
  if (soft.shape() != pseudo.shape()) {
    throw ShapeError("assignment loss: soft " + to_string(soft.shape()) + " vs pseudo " + to_string(pseudo.shape()));
  }
  return ops::cross_entropy_map(ops::scale(soft, 1.0f / temperature), pseudo);
}

Assigner::Assigner(const AssignerConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), encoder_(cfg.encoder, seed) {
  if (cfg.n_annotators < 1 || cfg.n_annotators > 254) throw ValueError("assigner: n_annotators out of range");
  Rng rng(mix_seed(seed) ^ 0x70726f746f73ULL);
  bank_ = make_prototype_bank(cfg.encoder.feature_dim, cfg.groups(), cfg.prototypes_per_group, rng);
  ParamGroup g{"assigner", ParamTag::assigner(), {}};
  for (const auto& l : encoder_.layers()) {
    g.params.push_back({l.name + ".weight", l.weight});
    g.params.push_back({l.name + ".bias", l.bias});
  }
  g.params.push_back({"assigner.prototypes", bank_.prototypes});
  groups_.push_back(std::move(g));
}

Assigner::Output Assigner::assign(const Tensor& images) const {
  Output out;
  out.scores = score(images);
  out.rh = static_cast<int>(images.dim(2)) / out.scores.height;
  out.rw = static_cast<int>(images.dim(3)) / out.scores.width;
  const int G = cfg_.groups();
  const std::size_t per = static_cast<std::size_t>(G) * out.scores.height * out.scores.width;
  for (int b = 0; b < out.scores.batch; ++b) {
    out.hard.push_back(hard_mask(out.scores.soft.data().subspan(b * per, per), G, out.scores.height,
                                 out.scores.width, out.rh, out.rw));
  }
  return out;
}

std::uint64_t bank_hash(const Assigner& assigner) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& g : assigner.groups()) h ^= checksum(g) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace tax
