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
#include "tax/optim.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>

#include "tax/error.hpp"

namespace tax {

ParamTag ParamTag::annotator(int k) {
  if (k < 1) throw ValueError("ParamTag: annotator index must be >= 1");
  return ParamTag(Kind::kAnnotator, k);
}

std::string ParamTag::str() const {
  switch (kind_) {
    case Kind::kAnnotator:
      return "annotator:" + std::to_string(index_);
    case Kind::kShared:
      return "shared";
    case Kind::kBackbone:
      return "backbone";
    case Kind::kAssigner:
      return "assigner";
  }
  return "?";
}

ParamTag ParamTag::parse(const std::string& s) {
  if (s == "shared") return shared();
  if (s == "backbone") return backbone();
  if (s == "assigner") return assigner();
  const std::string prefix = "annotator:";
  if (s.rfind(prefix, 0) == 0) {
    const std::string digits = s.substr(prefix.size());
    if (!digits.empty() && digits.size() < 4 && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
      return annotator(std::stoi(digits));
    }
  }
  throw ValueError("ParamTag: unknown tag '" + s + "'");
}

OptimState::OptimState(float lr, float mom, const std::vector<ParamGroup>& groups)
    : learning_rate(lr), momentum(mom) {
  if (!(lr > 0.0f)) throw ValueError("OptimState: learning rate must be positive");
  if (mom < 0.0f || mom >= 1.0f) throw ValueError("OptimState: momentum must be in [0,1)");
  if (mom > 0.0f) {
    for (const auto& g : groups)
      for (const auto& p : g.params)
        velocity.emplace(p.name, std::vector<float>(static_cast<std::size_t>(p.tensor.numel()), 0.0f));
  }
}

void zero_grads(const std::vector<ParamGroup>& groups) {
  for (const auto& g : groups)
    for (const auto& p : g.params) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
}

void sgd_step(const std::vector<ParamGroup>& groups, OptimState& state,
              const std::set<ParamTag>& active_tags) {
  for (const auto& g : groups) {
    if (!active_tags.contains(g.tag)) continue;
    for (const auto& p : g.params) {
      if (!p.tensor.has_grad()) {
        throw Error("sgd_step: active parameter '" + p.name + "' (group " + g.name +
                    ") has no gradient");
      }
    }
  }
  for (const auto& g : groups) {
    if (!active_tags.contains(g.tag)) continue;
    for (const auto& p : g.params) {
      Tensor t = p.tensor;
      auto theta = t.mutable_data();
      const auto grad = t.grad();
      if (state.momentum > 0.0f) {
        auto it = state.velocity.find(p.name);
        if (it == state.velocity.end() || it->second.size() != theta.size()) {
          throw Error("sgd_step: no velocity buffer matching parameter '" + p.name + "'");
        }
        auto& v = it->second;
        for (std::size_t i = 0; i < theta.size(); ++i) {
          v[i] = state.momentum * v[i] + grad[i];
          theta[i] -= state.learning_rate * v[i];
        }
      } else {
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= state.learning_rate * grad[i];
      }
    }
  }
  zero_grads(groups);
}

std::uint64_t checksum(const ParamGroup& group) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : group.params) {
    for (float v : p.tensor.data()) {
      unsigned char bytes[sizeof(float)];
      std::memcpy(bytes, &v, sizeof(float));
      for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace tax
