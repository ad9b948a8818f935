// Copyright 2026 The MPT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Little-endian byte encoding shared by the dataset, mask and checkpoint
// formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mpt/dataset.hpp"

namespace mpt::detail {

class ByteWriter {
 public:
  void magic(std::string_view m) {
    bytes_.insert(bytes_.end(), m.begin(), m.end());
  }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::span<const std::uint8_t> data) {
    bytes_.insert(bytes_.end(), data.begin(), data.end());
  }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked reader; a short read is reported as truncation of `field`.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0) {
      throw FormatError("magic", "expected \"" + std::string(m) + "\"");
    }
    pos_ += m.size();
  }
  std::uint8_t u8(const char* field) {
    need(1, field);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* field) { return get<std::uint32_t>(field); }
  std::uint64_t u64(const char* field) { return get<std::uint64_t>(field); }
  float f32(const char* field) {
    return std::bit_cast<float>(get<std::uint32_t>(field));
  }
  std::span<const std::uint8_t> raw(std::size_t n, const char* field) {
    need(n, field);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw FormatError(field, "truncated payload: need " + std::to_string(n) +
                                   " bytes, " + std::to_string(remaining()) +
                                   " remain");
    }
  }

 private:
  template <typename U>
  U get(const char* field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error("read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace mpt::detail
