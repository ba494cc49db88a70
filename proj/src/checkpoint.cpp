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
#include "tax/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "tax/error.hpp"
#include "tax/image.hpp"

namespace tax {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "TAXCKPT1";
constexpr std::size_t kMagicSize = 8;
constexpr std::size_t kPreamble = kMagicSize + 8;
const std::string kVelocityPrefix = "velocity/";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

FormatError at_offset(std::size_t offset, const std::string& what) {
  return FormatError("checkpoint: " + what + " at byte offset " + std::to_string(offset));
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (numel(t.shape) != static_cast<std::int64_t>(t.values.size())) {
      throw ShapeError("checkpoint: tensor '" + t.name + "' shape does not match its values");
    }
    table.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    offset += t.values.size() * 4;
  }
  const json header{{"version", ckpt.version}, {"stage", ckpt.stage}, {"config", ckpt.config},
                    {"state", ckpt.state},     {"tensors", table},   {"payload_bytes", offset}};
  const std::string text = header.dump();

  std::string out(kMagic, kMagicSize);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : ckpt.tensors)
    for (float v : t.values) put_f32(out, v);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kPreamble) throw at_offset(bytes.size(), "file truncated before the header");
  if (bytes.compare(0, kMagicSize, kMagic) != 0) throw at_offset(0, "bad magic (expected TAXCKPT1)");
  const std::uint64_t header_len = get_u64(bytes, kMagicSize);
  if (header_len > bytes.size() - kPreamble) throw at_offset(kMagicSize, "header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.begin() + kPreamble, bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + header_len));
  } catch (const json::parse_error& e) {
    throw at_offset(kPreamble + (e.byte > 0 ? e.byte - 1 : 0), std::string("malformed JSON header (") + e.what() + ")");
  }

  Checkpoint ckpt;
  const std::size_t payload = kPreamble + header_len;
  try {
    ckpt.version = header.at("version").get<int>();
    if (ckpt.version != kCheckpointVersion) {
      throw at_offset(kPreamble, "unsupported version " + std::to_string(ckpt.version) + " (this build reads " +
                                     std::to_string(kCheckpointVersion) + ")");
    }
    ckpt.stage = header.at("stage").get<std::string>();
    ckpt.config = header.at("config");
    ckpt.state = header.at("state");
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (payload_bytes != bytes.size() - payload) {
      throw at_offset(payload, "payload holds " + std::to_string(bytes.size() - payload) + " bytes, header declares " +
                                   std::to_string(payload_bytes));
    }
    for (const auto& entry : header.at("tensors")) {
      NamedArray t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      const auto off = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (numel(t.shape) != static_cast<std::int64_t>(count)) {
        throw at_offset(kPreamble, "tensor '" + t.name + "' count does not match its shape");
      }
      if (off % 4 != 0 || off > payload_bytes || count * 4 > payload_bytes - off) {
        throw at_offset(payload + off, "tensor '" + t.name + "' lies outside the payload");
      }
      t.values.resize(count);
      const char* p = bytes.data() + payload + off;
      for (std::uint64_t i = 0; i < count; ++i) t.values[i] = get_f32(p + 4 * i);
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw at_offset(kPreamble, std::string("invalid header field (") + e.what() + ")");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_file(tmp, encode_checkpoint(ckpt));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void store_parameters(Checkpoint& ckpt, const std::vector<Parameter>& params, const std::string& prefix) {
  for (const auto& p : params) {
    ckpt.tensors.push_back({prefix + p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
}

void restore_parameters(const Checkpoint& ckpt, const std::vector<Parameter>& params, const std::string& prefix) {
  std::vector<const NamedArray*> found;
  for (const auto& p : params) {
    const auto* t = ckpt.find(prefix + p.name);
    if (!t) throw FormatError("checkpoint (" + ckpt.stage + "): missing tensor '" + prefix + p.name + "'");
    if (t->shape != p.tensor.shape()) {
      throw ShapeError("checkpoint (" + ckpt.stage + "): tensor '" + t->name + "' has shape " + to_string(t->shape) +
                       ", model expects " + to_string(p.tensor.shape()));
    }
    found.push_back(t);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(found[i]->values.begin(), found[i]->values.end(), t.mutable_data().begin());
  }
}

void store_optimizer(Checkpoint& ckpt, const OptimState& state) {
  for (const auto& [name, v] : state.velocity) {
    ckpt.tensors.push_back({kVelocityPrefix + name, {static_cast<std::int64_t>(v.size())}, v});
  }
}

void restore_optimizer(const Checkpoint& ckpt, OptimState& state) {
  for (auto& [name, v] : state.velocity) {
    const auto* t = ckpt.find(kVelocityPrefix + name);
    if (!t || t->values.size() != v.size()) {
      throw FormatError("checkpoint (" + ckpt.stage + "): missing or mis-sized velocity for '" + name + "'");
    }
  }
  for (auto& [name, v] : state.velocity) v = ckpt.find(kVelocityPrefix + name)->values;
}

}  // namespace tax
