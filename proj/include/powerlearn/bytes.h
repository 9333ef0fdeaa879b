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

// Little-endian byte helpers and the `key=value` header format shared by the
// release bundle and the parameter blobs.

#ifndef POWERLEARN_BYTES_H_
#define POWERLEARN_BYTES_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/statusor.h"

namespace powerlearn {

using Bytes = std::vector<uint8_t>;

void AppendU32(Bytes& out, uint32_t v);
void AppendU64(Bytes& out, uint64_t v);
void AppendF64(Bytes& out, double v);
void AppendString(Bytes& out, std::string_view s);

uint32_t LoadU32(const uint8_t* p);
uint64_t LoadU64(const uint8_t* p);
double LoadF64(const uint8_t* p);

// IEEE CRC-32 (zlib).
uint32_t Crc32(std::span<const uint8_t> bytes);

// "%.17g" rendering; parses back to the identical double.
std::string FormatDouble(double v);

// Parses `key=value\n` lines up to a blank line starting at `pos`. On success
// `pos` points just past the blank line. Keys must be unique.
absl::StatusOr<std::map<std::string, std::string>> ParseHeaderLines(
    std::span<const uint8_t> bytes, size_t& pos);

absl::StatusOr<Bytes> ReadFileBytes(const std::string& path);
absl::Status WriteFileBytes(const std::string& path,
                            std::span<const uint8_t> bytes);

}  // namespace powerlearn

#endif  // POWERLEARN_BYTES_H_
