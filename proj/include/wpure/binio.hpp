//
// Copyright 2026 The wpure Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WPURE_BINIO_HPP
#define WPURE_BINIO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wpure/error.hpp"

namespace wpure::binio {

// Little-endian byte sink. Output bytes do not depend on host endianness.
class Writer {
public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  void u8(std::uint8_t v) { bytes_.push_back(v); }

  void u32(std::uint32_t v) { put(v, 4); }

  void u64(std::uint64_t v) { put(v, 8); }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<std::uint8_t> &bytes() const noexcept { return bytes_; }

private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked little-endian reader that tracks its byte offset so parse
// errors can point at the failing field.
class Reader {
public:
  explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return bytes_.size() - pos_; }

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      throw ParseError(ParseError::Kind::BadMagic, pos_, "bad magic, expected \"" + std::string(m) + "\"");
    pos_ += m.size();
  }

  std::uint8_t u8(const char *field) {
    need(1, field);
    return bytes_[pos_++];
  }

  std::uint32_t u32(const char *field) { return static_cast<std::uint32_t>(get(4, field)); }

  std::uint64_t u64(const char *field) { return get(8, field); }

  float f32(const char *field) { return std::bit_cast<float>(u32(field)); }

  /// Throws unless exactly `n` bytes remain for a payload of that size.
  void need(std::uint64_t n, const char *field) const {
    if (remaining() < n)
      throw ParseError(ParseError::Kind::Truncated, pos_,
                       std::string("truncated ") + field + ": need " + std::to_string(n) + " bytes, " +
                           std::to_string(remaining()) + " remain");
  }

  void expect_end() const {
    if (remaining() != 0)
      throw ParseError(ParseError::Kind::BadShape, pos_, std::to_string(remaining()) + " trailing bytes after payload");
  }

private:
  std::uint64_t get(int n, const char *field) {
    need(static_cast<std::uint64_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::uint64_t>(n);
    return v;
  }

  std::vector<std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary and renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path &path, const void *data, std::size_t size) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(static_cast<const char *>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

inline void write_file_atomic(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes) {
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline void write_file_atomic(const std::filesystem::path &path, std::string_view text) {
  write_file_atomic(path, text.data(), text.size());
}

} // namespace wpure::binio

#endif // WPURE_BINIO_HPP
