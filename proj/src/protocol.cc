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


#include "powerlearn/protocol.h"

#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>

#include "absl/strings/cord.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/time/clock.h"

namespace powerlearn {
namespace {

constexpr size_t kMagicSize = sizeof(kBundleMagic) - 1;
constexpr size_t kMaxHeaderBytes = 4096;
constexpr char kPayloadUrl[] = "type.powerlearn/decode-error";
constexpr const char* kHeaderKeys[] = {"n",     "dim",        "eps_target",
                                       "delta", "lambda_adj", "schema_hash"};

std::atomic<uint64_t> g_connections{0}, g_requests{0}, g_responses{0},
    g_accepted{0};

absl::Status DecodeFailure(DecodeError e, absl::string_view msg) {
  absl::StatusCode code = absl::StatusCode::kInvalidArgument;
  if (e == DecodeError::kCrc) code = absl::StatusCode::kDataLoss;
  if (e == DecodeError::kTruncation) code = absl::StatusCode::kOutOfRange;
  absl::Status s(code, absl::StrCat("bundle ", DecodeErrorName(e), " error: ",
                                    msg));
  s.SetPayload(kPayloadUrl, absl::Cord(DecodeErrorName(e)));
  return s;
}

struct Header {
  size_t n = 0;
  size_t dim = 0;
  double eps_target = 0.0;
  double delta = 0.0;
  double lambda_adj = 0.0;
  uint32_t schema_hash = 0;
  size_t payload_start = 0;
  size_t total_size = 0;
};

bool ParseDoubleExact(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

// Magic and header; `bytes` may stop anywhere after the blank line.
absl::StatusOr<Header> ParseHeader(std::span<const uint8_t> bytes) {
  const size_t m = std::min(bytes.size(), kMagicSize);
  if (std::memcmp(bytes.data(), kBundleMagic, m) != 0) {
    return DecodeFailure(DecodeError::kMagic, "bad magic bytes");
  }
  if (bytes.size() < kMagicSize) {
    return DecodeFailure(DecodeError::kTruncation, "stream ends inside magic");
  }
  size_t pos = kMagicSize;
  absl::StatusOr<std::map<std::string, std::string>> kv =
      ParseHeaderLines(bytes, pos);
  if (!kv.ok()) {
    if (absl::IsOutOfRange(kv.status())) {
      return DecodeFailure(DecodeError::kTruncation, kv.status().message());
    }
    return DecodeFailure(DecodeError::kHeader, kv.status().message());
  }
  if (kv->size() != std::size(kHeaderKeys)) {
    return DecodeFailure(DecodeError::kHeader,
                         absl::StrFormat("expected %d keys, found %d",
                                         std::size(kHeaderKeys), kv->size()));
  }
  for (const char* key : kHeaderKeys) {
    if (!kv->count(key)) {
      return DecodeFailure(DecodeError::kHeader,
                           absl::StrCat("missing key '", key, "'"));
    }
  }
  Header h;
  uint64_t n = 0, dim = 0;
  uint32_t hash = 0;
  if (!absl::SimpleAtoi(kv->at("n"), &n) ||
      !absl::SimpleAtoi(kv->at("dim"), &dim) ||
      !absl::SimpleAtoi(kv->at("schema_hash"), &hash)) {
    return DecodeFailure(DecodeError::kHeader, "bad integer field");
  }
  if (!ParseDoubleExact(kv->at("eps_target"), h.eps_target) ||
      !ParseDoubleExact(kv->at("delta"), h.delta) ||
      !ParseDoubleExact(kv->at("lambda_adj"), h.lambda_adj)) {
    return DecodeFailure(DecodeError::kHeader, "bad float field");
  }
  // Bound sizes so the byte count cannot overflow.
  constexpr uint64_t kLimit = uint64_t{1} << 40;
  if (n > kLimit || dim > kLimit || (dim > 0 && n > kLimit / dim)) {
    return DecodeFailure(DecodeError::kHeader, "declared size too large");
  }
  h.n = n;
  h.dim = dim;
  h.schema_hash = hash;
  h.payload_start = pos;
  h.total_size = pos + 8 * n * dim + 8 * n + 4;
  return h;
}

bool SendAll(int fd, std::span<const uint8_t> bytes) {
  size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t w =
        ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<size_t>(w);
  }
  return true;
}

int TimeoutMs(absl::Time deadline) {
  const absl::Duration left = deadline - absl::Now();
  if (left <= absl::ZeroDuration()) return 0;
  return static_cast<int>(
      std::min<int64_t>(absl::ToInt64Milliseconds(left) + 1, 1 << 30));
}

// Reads up to `want` bytes (appending to `out`); returns false on timeout.
// Stops early at end of stream, setting `eof`.
absl::Status RecvSome(int fd, size_t want, Bytes& out, absl::Time deadline,
                      bool& eof) {
  uint8_t buf[65536];
  while (want > 0) {
    pollfd p{fd, POLLIN, 0};
    const int ready = ::poll(&p, 1, TimeoutMs(deadline));
    if (ready < 0) {
      if (errno == EINTR) continue;
      return absl::InternalError(absl::StrCat("poll: ", std::strerror(errno)));
    }
    if (ready == 0) return absl::DeadlineExceededError("receive timed out");
    const ssize_t r = ::recv(fd, buf, std::min(want, sizeof(buf)), 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      return absl::InternalError(absl::StrCat("recv: ", std::strerror(errno)));
    }
    if (r == 0) {
      eof = true;
      return absl::OkStatus();
    }
    out.insert(out.end(), buf, buf + r);
    want -= static_cast<size_t>(r);
  }
  return absl::OkStatus();
}

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const { return fd_; }

 private:
  int fd_;
};

absl::StatusOr<addrinfo*> Resolve(const std::string& host, int port,
                                  bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(),
                               service.c_str(), &hints, &res);
  if (rc != 0 || res == nullptr) {
    return absl::InvalidArgumentError(
        absl::StrCat("cannot resolve ", host, ": ", ::gai_strerror(rc)));
  }
  return res;
}

}  // namespace

absl::Status ReleaseBundle::Validate() const {
  if (embeddings.rows() != labels.size()) {
    return absl::InvalidArgumentError(
        absl::StrFormat("%d embedding rows but %d labels", embeddings.rows(),
                        labels.size()));
  }
  if (embeddings.rows() > 0 && embeddings.cols() != dim) {
    return absl::InvalidArgumentError("embedding width differs from dim");
  }
  if (!embeddings.AllFinite() || !std::isfinite(eps_target) ||
      !std::isfinite(delta) || !std::isfinite(lambda_adj)) {
    return absl::InvalidArgumentError("bundle contains non-finite values");
  }
  return absl::OkStatus();
}

bool BitwiseEqual(const ReleaseBundle& a, const ReleaseBundle& b) {
  auto same = [](double x, double y) {
    return std::memcmp(&x, &y, sizeof(double)) == 0;
  };
  if (a.dim != b.dim || !same(a.eps_target, b.eps_target) ||
      !same(a.delta, b.delta) || !same(a.lambda_adj, b.lambda_adj) ||
      a.schema_hash != b.schema_hash || a.labels != b.labels ||
      a.embeddings.rows() != b.embeddings.rows() ||
      a.embeddings.size() != b.embeddings.size()) {
    return false;
  }
  return std::memcmp(a.embeddings.data().data(), b.embeddings.data().data(),
                     a.embeddings.size() * sizeof(double)) == 0;
}

absl::StatusOr<ReleaseBundle> MakeBundle(const Matrix& z,
                                         std::span<const int> labels,
                                         std::span<const size_t> released,
                                         double eps_target, double delta,
                                         double lambda_adj,
                                         uint32_t schema_hash) {
  if (z.rows() != labels.size()) {
    return absl::InvalidArgumentError("embedding and label counts differ");
  }
  ReleaseBundle b;
  b.dim = z.cols();
  b.eps_target = eps_target;
  b.delta = delta;
  b.lambda_adj = lambda_adj;
  b.schema_hash = schema_hash;
  for (size_t r : released) {
    if (r >= z.rows()) return absl::OutOfRangeError("released index out of range");
  }
  b.embeddings = SelectRows(z, released);
  if (released.empty()) b.embeddings = Matrix(0, z.cols());
  for (size_t r : released) b.labels.push_back(labels[r]);
  if (absl::Status s = b.Validate(); !s.ok()) return s;
  return b;
}

absl::StatusOr<Bytes> EncodeBundle(const ReleaseBundle& b) {
  if (absl::Status s = b.Validate(); !s.ok()) return s;
  Bytes out;
  AppendString(out, kBundleMagic);
  AppendString(out, absl::StrCat("n=", b.size(), "\n"));
  AppendString(out, absl::StrCat("dim=", b.dim, "\n"));
  AppendString(out, absl::StrCat("eps_target=", FormatDouble(b.eps_target), "\n"));
  AppendString(out, absl::StrCat("delta=", FormatDouble(b.delta), "\n"));
  AppendString(out, absl::StrCat("lambda_adj=", FormatDouble(b.lambda_adj), "\n"));
  AppendString(out, absl::StrCat("schema_hash=", b.schema_hash, "\n\n"));
  out.reserve(out.size() + 8 * b.embeddings.size() + 8 * b.size() + 4);
  for (double v : b.embeddings.data()) AppendF64(out, v);
  for (int64_t y : b.labels) AppendU64(out, static_cast<uint64_t>(y));
  AppendU32(out, Crc32(out));
  return out;
}

std::string DecodeErrorName(DecodeError e) {
  switch (e) {
    case DecodeError::kNone:
      return "none";
    case DecodeError::kMagic:
      return "magic";
    case DecodeError::kHeader:
      return "header";
    case DecodeError::kCrc:
      return "crc";
    case DecodeError::kTruncation:
      return "truncation";
    case DecodeError::kNonFinite:
      return "non-finite";
  }
  return "none";
}

DecodeError DecodeErrorOf(const absl::Status& s) {
  const auto p = s.GetPayload(kPayloadUrl);
  if (!p) return DecodeError::kNone;
  const std::string name(*p);
  for (DecodeError e : {DecodeError::kMagic, DecodeError::kHeader,
                        DecodeError::kCrc, DecodeError::kTruncation,
                        DecodeError::kNonFinite}) {
    if (DecodeErrorName(e) == name) return e;
  }
  return DecodeError::kNone;
}

absl::StatusOr<ReleaseBundle> DecodeBundle(std::span<const uint8_t> bytes) {
  absl::StatusOr<Header> h = ParseHeader(bytes);
  if (!h.ok()) return h.status();
  if (bytes.size() < h->total_size) {
    return DecodeFailure(
        DecodeError::kTruncation,
        absl::StrFormat("need %d bytes, have %d", h->total_size, bytes.size()));
  }
  if (bytes.size() > h->total_size) {
    return DecodeFailure(
        DecodeError::kHeader,
        absl::StrFormat("%d trailing bytes", bytes.size() - h->total_size));
  }
  const size_t body = h->total_size - 4;
  if (Crc32(bytes.subspan(0, body)) != LoadU32(bytes.data() + body)) {
    return DecodeFailure(DecodeError::kCrc, "checksum mismatch");
  }
  ReleaseBundle b;
  b.dim = h->dim;
  b.eps_target = h->eps_target;
  b.delta = h->delta;
  b.lambda_adj = h->lambda_adj;
  b.schema_hash = h->schema_hash;
  b.embeddings = Matrix(h->n, h->dim);
  const uint8_t* p = bytes.data() + h->payload_start;
  for (double& v : b.embeddings.data()) {
    v = LoadF64(p);
    p += 8;
  }
  b.labels.resize(h->n);
  for (int64_t& y : b.labels) {
    y = static_cast<int64_t>(LoadU64(p));
    p += 8;
  }
  if (!b.embeddings.AllFinite() || !std::isfinite(b.eps_target) ||
      !std::isfinite(b.delta) || !std::isfinite(b.lambda_adj)) {
    return DecodeFailure(DecodeError::kNonFinite, "non-finite value");
  }
  return b;
}

absl::Status WriteBundleFile(const std::string& path, const ReleaseBundle& b) {
  absl::StatusOr<Bytes> bytes = EncodeBundle(b);
  if (!bytes.ok()) return bytes.status();
  return WriteFileBytes(path, *bytes);
}

absl::StatusOr<ReleaseBundle> ReadBundleFile(const std::string& path) {
  absl::StatusOr<Bytes> bytes = ReadFileBytes(path);
  if (!bytes.ok()) return bytes.status();
  return DecodeBundle(*bytes);
}

TransportCounters GetTransportCounters() {
  return {g_connections.load(), g_requests.load(), g_responses.load(),
          g_accepted.load()};
}

void ResetTransportCounters() {
  g_connections = 0;
  g_requests = 0;
  g_responses = 0;
  g_accepted = 0;
}

absl::Status SendBytes(const std::string& host, int port,
                       std::span<const uint8_t> bytes,
                       absl::Duration timeout) {
  absl::StatusOr<addrinfo*> res = Resolve(host, port, false);
  if (!res.ok()) return res.status();
  const absl::Time deadline = absl::Now() + timeout;
  Fd fd(::socket((*res)->ai_family, (*res)->ai_socktype, (*res)->ai_protocol));
  if (fd.get() < 0) {
    ::freeaddrinfo(*res);
    return absl::InternalError(absl::StrCat("socket: ", std::strerror(errno)));
  }
  const int rc = ::connect(fd.get(), (*res)->ai_addr, (*res)->ai_addrlen);
  const int connect_errno = errno;
  ::freeaddrinfo(*res);
  if (rc != 0) {
    return absl::UnavailableError(absl::StrFormat(
        "connect %s:%d: %s", host, port, std::strerror(connect_errno)));
  }
  ++g_connections;
  if (!SendAll(fd.get(), bytes)) {
    return absl::UnavailableError(absl::StrCat("send: ", std::strerror(errno)));
  }
  ++g_requests;
  ::shutdown(fd.get(), SHUT_WR);
  Bytes reply;
  bool eof = false;
  absl::Status s = RecvSome(fd.get(), 1, reply, deadline, eof);
  if (absl::IsDeadlineExceeded(s)) {
    return absl::DeadlineExceededError("no acknowledgement before timeout");
  }
  if (!s.ok()) return s;
  if (reply.empty()) {
    return absl::UnavailableError("connection closed without acknowledgement");
  }
  ++g_responses;
  if (reply[0] == kAck) return absl::OkStatus();
  if (reply[0] == kNak) return absl::DataLossError("server rejected bundle (nak)");
  return absl::InternalError(
      absl::StrFormat("unexpected reply byte 0x%02x", reply[0]));
}

absl::Status SendBundle(const std::string& host, int port,
                        const ReleaseBundle& b, absl::Duration timeout) {
  absl::StatusOr<Bytes> bytes = EncodeBundle(b);
  if (!bytes.ok()) return bytes.status();
  return SendBytes(host, port, *bytes, timeout);
}

absl::StatusOr<BundleServer> BundleServer::Listen(const std::string& host,
                                                  int port) {
  absl::StatusOr<addrinfo*> res = Resolve(host, port, true);
  if (!res.ok()) return res.status();
  const int fd =
      ::socket((*res)->ai_family, (*res)->ai_socktype, (*res)->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(*res);
    return absl::InternalError(absl::StrCat("socket: ", std::strerror(errno)));
  }
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, (*res)->ai_addr, (*res)->ai_addrlen) != 0 ||
      ::listen(fd, 1) != 0) {
    const int err = errno;
    ::freeaddrinfo(*res);
    ::close(fd);
    return absl::UnavailableError(
        absl::StrFormat("listen %s:%d: %s", host, port, std::strerror(err)));
  }
  ::freeaddrinfo(*res);
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  return BundleServer(fd, ntohs(addr.sin_port));
}

BundleServer::BundleServer(BundleServer&& other) noexcept
    : fd_(other.fd_), port_(other.port_) {
  other.fd_ = -1;
}

BundleServer& BundleServer::operator=(BundleServer&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    port_ = other.port_;
    other.fd_ = -1;
  }
  return *this;
}

BundleServer::~BundleServer() {
  if (fd_ >= 0) ::close(fd_);
}

absl::StatusOr<Received> BundleServer::Accept(absl::Duration timeout) {
  const absl::Time deadline = absl::Now() + timeout;
  pollfd p{fd_, POLLIN, 0};
  int ready;
  do {
    ready = ::poll(&p, 1, TimeoutMs(deadline));
  } while (ready < 0 && errno == EINTR);
  if (ready == 0) return absl::DeadlineExceededError("no client connected");
  if (ready < 0) {
    return absl::InternalError(absl::StrCat("poll: ", std::strerror(errno)));
  }
  Fd conn(::accept(fd_, nullptr, nullptr));
  if (conn.get() < 0) {
    return absl::InternalError(absl::StrCat("accept: ", std::strerror(errno)));
  }
  ++g_accepted;

  Received out{Bytes(), absl::UnknownError("unset")};
  bool eof = false;
  absl::Status s;
  // Header first, byte by byte, so we learn the declared size.
  absl::StatusOr<Header> header = absl::UnknownError("unset");
  while (true) {
    s = RecvSome(conn.get(), 1, out.bytes, deadline, eof);
    if (!s.ok() || eof) break;
    header = ParseHeader(out.bytes);
    if (header.ok() || DecodeErrorOf(header.status()) != DecodeError::kTruncation ||
        out.bytes.size() > kMaxHeaderBytes) {
      break;
    }
  }
  if (header.ok() && s.ok() && !eof) {
    s = RecvSome(conn.get(), header->total_size - out.bytes.size(), out.bytes,
                 deadline, eof);
  }
  if (!s.ok()) {
    SendAll(conn.get(), std::span<const uint8_t>(&kNak, 1));
    return s;
  }
  // A client that keeps writing past the declared size gets rejected too.
  if (header.ok() && !eof) {
    Bytes extra;
    bool extra_eof = false;
    absl::Status es = RecvSome(conn.get(), 1, extra, deadline, extra_eof);
    if (es.ok() && !extra.empty()) {
      out.bytes.insert(out.bytes.end(), extra.begin(), extra.end());
    }
  }
  out.bundle = DecodeBundle(out.bytes);
  const uint8_t reply = out.bundle.ok() ? kAck : kNak;
  SendAll(conn.get(), std::span<const uint8_t>(&reply, 1));
  return out;
}

absl::StatusOr<ReleaseBundle> ServeOnce(const std::string& host, int port,
                                        absl::Duration timeout) {
  absl::StatusOr<BundleServer> server = BundleServer::Listen(host, port);
  if (!server.ok()) return server.status();
  absl::StatusOr<Received> got = server->Accept(timeout);
  if (!got.ok()) return got.status();
  return std::move(got->bundle);
}

}  // namespace powerlearn
