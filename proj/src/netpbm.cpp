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
#include <cctype>
#include <fstream>
#include <iterator>

#include "tax/error.hpp"
#include "tax/image.hpp"

namespace tax {

namespace {

std::string header(const char* magic, int width, int height) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) +
         "\n255\n";
}

// Minimal header tokenizer: whitespace separated, '#' comments to end of line.
class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw FormatError("netpbm: truncated header at byte " + std::to_string(pos_));
    return bytes_.substr(start, pos_ - start);
  }

  int number() {
    const std::string t = token();
    for (char c : t)
      if (!std::isdigit(static_cast<unsigned char>(c)))
        throw FormatError("netpbm: expected a number in header, got '" + t + "'");
    return std::stoi(t);
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
      throw FormatError("netpbm: missing whitespace before raster");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

struct Parsed {
  int width, height;
  std::size_t offset;
};

Parsed parse_header(const std::string& bytes, const char* expected_magic) {
  HeaderReader r(bytes);
  const std::string magic = r.token();
  if (magic != expected_magic) {
    throw FormatError(std::string("netpbm: expected magic ") + expected_magic + ", got '" + magic + "'");
  }
  const int w = r.number(), h = r.number(), maxval = r.number();
  if (w <= 0 || h <= 0) throw FormatError("netpbm: non-positive dimensions");
  if (maxval != 255) throw FormatError("netpbm: only maxval 255 is supported, got " + std::to_string(maxval));
  return {w, h, r.raster_start()};
}

}  // namespace

std::string encode_ppm(const RgbImage& image) {
  std::string out = header("P6", image.width, image.height);
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

std::string encode_pgm(const Mask& mask) {
  std::string out = header("P5", mask.width, mask.height);
  out.append(mask.labels.begin(), mask.labels.end());
  return out;
}

RgbImage decode_ppm(const std::string& bytes) {
  const auto p = parse_header(bytes, "P6");
  RgbImage img(p.height, p.width);
  if (bytes.size() - p.offset < img.pixels.size()) throw FormatError("netpbm: truncated P6 raster");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(p.offset), img.pixels.size(), img.pixels.begin());
  return img;
}

Mask decode_pgm(const std::string& bytes) {
  const auto p = parse_header(bytes, "P5");
  Mask m(p.height, p.width);
  if (bytes.size() - p.offset < m.labels.size()) throw FormatError("netpbm: truncated P5 raster");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(p.offset), m.labels.size(), m.labels.begin());
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  write_file(path, encode_ppm(image));
}
void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  write_file(path, encode_pgm(mask));
}

RgbImage read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Mask read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace tax
