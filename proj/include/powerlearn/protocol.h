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


// The single-round release bundle: byte layout, .plb files and a one-shot
// TCP transport.
//
// Layout:
//   "PLRN1\n"
//   n=<int>\n dim=<int>\n eps_target=<%.17g>\n delta=<%.17g>\n
//   lambda_adj=<%.17g>\n schema_hash=<uint32>\n \n
//   n*dim little-endian f64 embeddings (row-major)
//   n little-endian int64 labels
//   little-endian CRC-32 of everything above
//
// The receiver answers with one byte, 0x06 (ack) or 0x15 (nak), and the
// connection closes. Integrity only: there is no authentication.

#ifndef POWERLEARN_PROTOCOL_H_
#define POWERLEARN_PROTOCOL_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "absl/time/time.h"
#include "powerlearn/bytes.h"
#include "powerlearn/numkit.h"

namespace powerlearn {

inline constexpr char kBundleMagic[] = "PLRN1\n";
inline constexpr uint8_t kAck = 0x06;
inline constexpr uint8_t kNak = 0x15;

struct ReleaseBundle {
  size_t dim = 0;
  double eps_target = 0.0;
  double delta = 0.0;
  double lambda_adj = 1.0;
  uint32_t schema_hash = 0;
  Matrix embeddings;  // n x dim
  std::vector<int64_t> labels;

  size_t size() const { return labels.size(); }
  absl::Status Validate() const;
};

// Field-by-field equality, bitwise on the f64 payload.
bool BitwiseEqual(const ReleaseBundle& a, const ReleaseBundle& b);

// Keeps the rows listed in `released`.
absl::StatusOr<ReleaseBundle> MakeBundle(const Matrix& z,
                                         std::span<const int> labels,
                                         std::span<const size_t> released,
                                         double eps_target, double delta,
                                         double lambda_adj,
                                         uint32_t schema_hash);

absl::StatusOr<Bytes> EncodeBundle(const ReleaseBundle& b);

enum class DecodeError { kNone, kMagic, kHeader, kCrc, kTruncation, kNonFinite };
std::string DecodeErrorName(DecodeError e);
// Cause attached to a DecodeBundle failure; kNone for other statuses.
DecodeError DecodeErrorOf(const absl::Status& s);

absl::StatusOr<ReleaseBundle> DecodeBundle(std::span<const uint8_t> bytes);

absl::Status WriteBundleFile(const std::string& path, const ReleaseBundle& b);
absl::StatusOr<ReleaseBundle> ReadBundleFile(const std::string& path);

// Per-process transport counters, for asserting a single round trip.
struct TransportCounters {
  uint64_t connections = 0;  // client connections opened
  uint64_t requests = 0;     // bundles written by clients
  uint64_t responses = 0;    // ack/nak bytes read by clients
  uint64_t accepted = 0;     // connections accepted by servers
};
TransportCounters GetTransportCounters();
void ResetTransportCounters();

inline constexpr absl::Duration kDefaultAckTimeout = absl::Seconds(30);

// Sends already-encoded bytes. OK only on ack; a nak is kDataLoss, a missing
// reply kDeadlineExceeded, a refused connection kUnavailable.
absl::Status SendBytes(const std::string& host, int port,
                       std::span<const uint8_t> bytes,
                       absl::Duration timeout = kDefaultAckTimeout);
absl::Status SendBundle(const std::string& host, int port,
                        const ReleaseBundle& b,
                        absl::Duration timeout = kDefaultAckTimeout);

struct Received {
  Bytes bytes;
  absl::StatusOr<ReleaseBundle> bundle;
};

// A listening socket that accepts one bundle per Accept call.
class BundleServer {
 public:
  // Port 0 picks a free port.
  static absl::StatusOr<BundleServer> Listen(const std::string& host, int port);

  BundleServer(BundleServer&& other) noexcept;
  BundleServer& operator=(BundleServer&& other) noexcept;
  BundleServer(const BundleServer&) = delete;
  BundleServer& operator=(const BundleServer&) = delete;
  ~BundleServer();

  int port() const { return port_; }

  // Reads one bundle, replies ack or nak, closes the connection. The outer
  // status covers socket failures; `bundle` holds the decode result.
  absl::StatusOr<Received> Accept(absl::Duration timeout = kDefaultAckTimeout);

 private:
  BundleServer(int fd, int port) : fd_(fd), port_(port) {}
  int fd_ = -1;
  int port_ = 0;
};

// Listen + a single Accept; a bundle that fails to decode is an error.
absl::StatusOr<ReleaseBundle> ServeOnce(
    const std::string& host, int port,
    absl::Duration timeout = kDefaultAckTimeout);

}  // namespace powerlearn

#endif  // POWERLEARN_PROTOCOL_H_
