// Copyright 2026 The PowerLearn Authors
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

#include "powerlearn/bytes.h"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "absl/status/status.h"
#include "absl/strings/str_format.h"

namespace powerlearn {

void AppendU32(Bytes& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void AppendU64(Bytes& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void AppendF64(Bytes& out, double v) { AppendU64(out, std::bit_cast<uint64_t>(v)); }

void AppendString(Bytes& out, std::string_view s) {
  out.insert(out.end(), s.begin(), s.end());
}

uint32_t LoadU32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

uint64_t LoadU64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

double LoadF64(const uint8_t* p) { return std::bit_cast<double>(LoadU64(p)); }

uint32_t Crc32(std::span<const uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t pos = 0;
  while (pos < bytes.size()) {
    const size_t chunk = std::min<size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<uint32_t>(crc);
}

std::string FormatDouble(double v) { return absl::StrFormat("%.17g", v); }

absl::StatusOr<std::map<std::string, std::string>> ParseHeaderLines(
    std::span<const uint8_t> bytes, size_t& pos) {
  std::map<std::string, std::string> out;
  while (true) {
    size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    if (end >= bytes.size()) {
      return absl::OutOfRangeError("header not terminated by a blank line");
    }
    std::string line(bytes.begin() + pos, bytes.begin() + end);
    pos = end + 1;
    if (line.empty()) return out;
    const size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      return absl::InvalidArgumentError("malformed header line '" + line + "'");
    }
    std::string key = line.substr(0, eq);
    if (!out.emplace(key, line.substr(eq + 1)).second) {
      return absl::InvalidArgumentError("duplicate header key '" + key + "'");
    }
  }
}

absl::StatusOr<Bytes> ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

absl::Status WriteFileBytes(const std::string& path,
                            std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return absl::PermissionDeniedError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) return absl::InternalError("short write to " + path);
  return absl::OkStatus();
}

}  // namespace powerlearn
