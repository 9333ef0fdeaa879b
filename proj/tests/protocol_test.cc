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

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <thread>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "powerlearn/dataio.h"
#include "powerlearn/rng.h"

namespace powerlearn {
namespace {

ReleaseBundle RandomBundle(uint64_t seed) {
  Rng rng(seed);
  ReleaseBundle b;
  const size_t n = rng.Below(20);
  b.dim = 1 + rng.Below(6);
  b.eps_target = rng.Uniform(0.1, 5.0);
  b.delta = rng.Uniform(0.001, 0.2);
  b.lambda_adj = rng.Uniform(0.1, 3.0);
  b.schema_hash = static_cast<uint32_t>(rng.NextU64());
  b.embeddings = Matrix(n, b.dim);
  for (double& v : b.embeddings.data()) v = rng.Normal() * 1e3;
  for (size_t i = 0; i < n; ++i) {
    b.labels.push_back(static_cast<int64_t>(rng.Below(5)) - 1);
  }
  return b;
}

// The bundle the golden-file encoder writes.
ReleaseBundle Seed42Bundle() {
  Rng rng(42);
  ReleaseBundle b;
  b.dim = 3;
  b.eps_target = 1.5;
  b.delta = 0.05;
  b.lambda_adj = 1.0;
  b.schema_hash = Fnv1a32("powerlearn");
  b.embeddings = Matrix(5, 3);
  for (double& v : b.embeddings.data()) v = rng.Uniform(-2.0, 2.0);
  for (int i = 0; i < 5; ++i) b.labels.push_back(rng.Below(3));
  return b;
}

std::string GoldenPath() {
  return std::string(POWERLEARN_SOURCE_DIR) + "/tests/golden/bundle_seed42.plb";
}

TEST(EncodeBundleTest, EmptyBundleIsHeaderAndCrc) {
  ReleaseBundle b;
  b.dim = 4;
  b.eps_target = 1.0;
  b.delta = 0.05;
  b.embeddings = Matrix(0, 4);
  Bytes bytes = *EncodeBundle(b);
  const std::string expect =
      "PLRN1\nn=0\ndim=4\neps_target=1\ndelta=0.050000000000000003\n"
      "lambda_adj=1\nschema_hash=0\n\n";
  ASSERT_EQ(bytes.size(), expect.size() + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.end() - 4), expect);
  ReleaseBundle back = *DecodeBundle(bytes);
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.dim, 4u);
  EXPECT_TRUE(BitwiseEqual(back, b));
}

TEST(EncodeBundleTest, PayloadBytesForOneRow) {
  ReleaseBundle b;
  b.dim = 2;
  b.embeddings = *Matrix::FromData(1, 2, {1.0, 2.0});
  b.labels = {0};
  Bytes bytes = *EncodeBundle(b);
  const uint8_t payload[] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F,  //
                             0, 0, 0, 0, 0, 0, 0,    0x40,  //
                             0, 0, 0, 0, 0, 0, 0,    0};
  ASSERT_GE(bytes.size(), sizeof(payload) + 4);
  const size_t start = bytes.size() - 4 - sizeof(payload);
  EXPECT_EQ(std::memcmp(bytes.data() + start, payload, sizeof(payload)), 0);
  EXPECT_EQ(bytes[start - 1], '\n');
  EXPECT_EQ(bytes[start - 2], '\n');
  EXPECT_EQ(std::memcmp(bytes.data(), "\x50\x4C\x52\x4E\x31\x0A", 6), 0);
}

TEST(EncodeBundleTest, MatchesGoldenFile) {
  Bytes golden = *ReadFileBytes(GoldenPath());
  Bytes ours = *EncodeBundle(Seed42Bundle());
  EXPECT_EQ(ours, golden);
  EXPECT_TRUE(BitwiseEqual(*DecodeBundle(golden), Seed42Bundle()));
}

TEST(EncodeBundleTest, RejectsBrokenInvariants) {
  ReleaseBundle b = Seed42Bundle();
  b.labels.pop_back();
  EXPECT_FALSE(EncodeBundle(b).ok());
  b = Seed42Bundle();
  b.embeddings(0, 0) = NAN;
  EXPECT_FALSE(EncodeBundle(b).ok());
  b = Seed42Bundle();
  b.dim = 2;
  EXPECT_FALSE(EncodeBundle(b).ok());
}

TEST(DecodeBundleTest, RoundTripIsBitwiseIdentity) {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ReleaseBundle b = RandomBundle(seed);
    absl::StatusOr<ReleaseBundle> back = DecodeBundle(*EncodeBundle(b));
    ASSERT_TRUE(back.ok()) << back.status();
    EXPECT_TRUE(BitwiseEqual(*back, b)) << seed;
  }
}

TEST(DecodeBundleTest, EveryPayloadByteFlipIsCrcError) {
  Bytes bytes = *EncodeBundle(Seed42Bundle());
  const size_t header_end = bytes.size() - 4 - 5 * 3 * 8 - 5 * 8;
  for (size_t i = header_end; i < bytes.size(); ++i) {
    Bytes bad = bytes;
    bad[i] ^= 0x01;
    absl::StatusOr<ReleaseBundle> r = DecodeBundle(bad);
    ASSERT_FALSE(r.ok());
    EXPECT_EQ(DecodeErrorOf(r.status()), DecodeError::kCrc) << i;
  }
}

TEST(DecodeBundleTest, DistinguishesCauses) {
  Bytes good = *EncodeBundle(Seed42Bundle());
  auto cause = [](const Bytes& b) { return DecodeErrorOf(DecodeBundle(b).status()); };

  Bytes cut(good.begin(), good.end() - 3);
  EXPECT_EQ(cause(cut), DecodeError::kTruncation);
  EXPECT_EQ(cause(Bytes(good.begin(), good.begin() + 3)), DecodeError::kTruncation);
  EXPECT_EQ(cause(Bytes(good.begin(), good.begin() + 20)), DecodeError::kTruncation);

  Bytes magic = good;
  magic[4] = '2';
  EXPECT_EQ(cause(magic), DecodeError::kMagic);
  EXPECT_EQ(cause(Bytes{'x'}), DecodeError::kMagic);

  std::string text(good.begin(), good.end());
  text.replace(text.find("dim=3"), 5, "dim=x");
  EXPECT_EQ(cause(Bytes(text.begin(), text.end())), DecodeError::kHeader);
  Bytes extra = good;
  extra.push_back(0);
  EXPECT_EQ(cause(extra), DecodeError::kHeader);

  // A NaN with a matching checksum.
  ReleaseBundle b = Seed42Bundle();
  Bytes nan = *EncodeBundle(b);
  const size_t body = nan.size() - 4 - 5 * 8 - 5 * 3 * 8;
  const double q = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(nan.data() + body, &q, 8);
  nan.resize(nan.size() - 4);
  AppendU32(nan, Crc32(nan));
  EXPECT_EQ(cause(nan), DecodeError::kNonFinite);

  EXPECT_EQ(DecodeErrorOf(absl::OkStatus()), DecodeError::kNone);
  EXPECT_EQ(DecodeErrorOf(absl::InternalError("x")), DecodeError::kNone);
}

TEST(BundleFileTest, RoundTrip) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "protocol_test.plb").string();
  ReleaseBundle b = RandomBundle(7);
  ASSERT_TRUE(WriteBundleFile(path, b).ok());
  EXPECT_TRUE(BitwiseEqual(*ReadBundleFile(path), b));
  std::filesystem::remove(path);
  EXPECT_FALSE(ReadBundleFile(path).ok());
}

TEST(MakeBundleTest, KeepsOnlyReleasedRowsAndNoPerSampleEpsilon) {
  Matrix z = *Matrix::FromData(3, 2, {1, 2, 3, 4, 5, 6});
  const std::vector<int> y = {0, 1, 0};
  const std::vector<size_t> keep = {2, 0};
  ReleaseBundle b = *MakeBundle(z, y, keep, 1.0, 0.05, 1.0, 9);
  EXPECT_EQ(b.embeddings.data(), (std::vector<double>{5, 6, 1, 2}));
  EXPECT_THAT(b.labels, ::testing::ElementsAre(0, 0));
  Bytes bytes = *EncodeBundle(b);
  // Header holds exactly the six documented keys.
  size_t pos = 6;
  auto kv = *ParseHeaderLines(bytes, pos);
  std::vector<std::string> keys;
  for (const auto& [k, v] : kv) keys.push_back(k);
  EXPECT_THAT(keys, ::testing::UnorderedElementsAre("n", "dim", "eps_target",
                                                    "delta", "lambda_adj",
                                                    "schema_hash"));
  EXPECT_EQ(bytes.size(), pos + 4 * 8 + 2 * 8 + 4);
  EXPECT_FALSE(MakeBundle(z, y, std::vector<size_t>{3}, 1, 0.05, 1, 0).ok());
}

class LoopbackTest : public ::testing::Test {
 protected:
  void SetUp() override {
    absl::StatusOr<BundleServer> s = BundleServer::Listen("127.0.0.1", 0);
    ASSERT_TRUE(s.ok()) << s.status();
    server_ = std::make_unique<BundleServer>(*std::move(s));
    ResetTransportCounters();
  }

  std::unique_ptr<BundleServer> server_;
};

TEST_F(LoopbackTest, GoldenBundleIsAcknowledged) {
  Bytes golden = *ReadFileBytes(GoldenPath());
  absl::StatusOr<Received> got;
  std::thread t([&] { got = server_->Accept(absl::Seconds(10)); });
  absl::Status sent = SendBytes("127.0.0.1", server_->port(), golden);
  t.join();
  EXPECT_TRUE(sent.ok()) << sent;
  ASSERT_TRUE(got.ok()) << got.status();
  EXPECT_EQ(got->bytes, golden);
  ASSERT_TRUE(got->bundle.ok());
  EXPECT_TRUE(BitwiseEqual(*got->bundle, Seed42Bundle()));
}

TEST_F(LoopbackTest, ExactlyOneRoundTripPerRelease) {
  absl::StatusOr<Received> got;
  std::thread t([&] { got = server_->Accept(absl::Seconds(10)); });
  ASSERT_TRUE(SendBundle("127.0.0.1", server_->port(), RandomBundle(3)).ok());
  t.join();
  TransportCounters c = GetTransportCounters();
  EXPECT_EQ(c.connections, 1u);
  EXPECT_EQ(c.requests, 1u);
  EXPECT_EQ(c.responses, 1u);
  EXPECT_EQ(c.accepted, 1u);
}

TEST_F(LoopbackTest, CorruptedStreamIsNacked) {
  Bytes bad = *EncodeBundle(Seed42Bundle());
  bad[bad.size() - 10] ^= 0xFF;
  absl::StatusOr<Received> got;
  std::thread t([&] { got = server_->Accept(absl::Seconds(10)); });
  absl::Status sent = SendBytes("127.0.0.1", server_->port(), bad);
  t.join();
  EXPECT_TRUE(absl::IsDataLoss(sent)) << sent;
  ASSERT_TRUE(got.ok());
  EXPECT_EQ(DecodeErrorOf(got->bundle.status()), DecodeError::kCrc);
}

TEST_F(LoopbackTest, TruncatedStreamIsNacked) {
  Bytes good = *EncodeBundle(Seed42Bundle());
  Bytes cut(good.begin(), good.end() - 3);
  absl::StatusOr<Received> got;
  std::thread t([&] { got = server_->Accept(absl::Seconds(10)); });
  absl::Status sent = SendBytes("127.0.0.1", server_->port(), cut);
  t.join();
  EXPECT_TRUE(absl::IsDataLoss(sent)) << sent;
  EXPECT_EQ(DecodeErrorOf(got->bundle.status()), DecodeError::kTruncation);
}

TEST_F(LoopbackTest, TenMegabyteBundleWithinTimeout) {
  ReleaseBundle b;
  b.dim = 104;
  const size_t n = 10'000'000 / (8 * 105) + 1;
  Rng rng(5);
  b.embeddings = Matrix(n, b.dim);
  for (double& v : b.embeddings.data()) v = rng.Normal();
  b.labels.assign(n, 1);
  Bytes bytes = *EncodeBundle(b);
  ASSERT_GE(bytes.size(), 10'000'000u);
  absl::StatusOr<Received> got;
  const auto start = std::chrono::steady_clock::now();
  std::thread t([&] { got = server_->Accept(kDefaultAckTimeout); });
  absl::Status sent = SendBytes("127.0.0.1", server_->port(), bytes);
  t.join();
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start)
                          .count();
  EXPECT_TRUE(sent.ok()) << sent;
  EXPECT_LT(secs, absl::ToDoubleSeconds(kDefaultAckTimeout));
  ASSERT_TRUE(got.ok() && got->bundle.ok());
  EXPECT_TRUE(BitwiseEqual(*got->bundle, b));
}

TEST(TransportTest, RefusedConnection) {
  int port;
  {
    BundleServer s = *BundleServer::Listen("127.0.0.1", 0);
    port = s.port();
  }
  EXPECT_TRUE(absl::IsUnavailable(
      SendBundle("127.0.0.1", port, RandomBundle(1), absl::Seconds(2))));
}

TEST(TransportTest, SilentServerTimesOut) {
  BundleServer s = *BundleServer::Listen("127.0.0.1", 0);
  // Listening but never accepting: the kernel completes the handshake and
  // no reply ever arrives.
  absl::Status sent = SendBundle("127.0.0.1", s.port(), RandomBundle(1),
                                 absl::Milliseconds(200));
  EXPECT_TRUE(absl::IsDeadlineExceeded(sent)) << sent;
}

TEST(TransportTest, AcceptTimesOutWithoutClient) {
  BundleServer s = *BundleServer::Listen("127.0.0.1", 0);
  EXPECT_TRUE(absl::IsDeadlineExceeded(
      s.Accept(absl::Milliseconds(50)).status()));
}

TEST(TransportTest, ServeOnceReturnsBundle) {
  // Reserve a port, release it, and serve on it.
  int port;
  {
    BundleServer probe = *BundleServer::Listen("127.0.0.1", 0);
    port = probe.port();
  }
  absl::StatusOr<ReleaseBundle> got;
  std::thread t([&] { got = ServeOnce("127.0.0.1", port, absl::Seconds(10)); });
  absl::Status sent;
  for (int attempt = 0; attempt < 100; ++attempt) {
    sent = SendBundle("127.0.0.1", port, Seed42Bundle(), absl::Seconds(5));
    if (!absl::IsUnavailable(sent)) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  t.join();
  EXPECT_TRUE(sent.ok()) << sent;
  ASSERT_TRUE(got.ok()) << got.status();
  EXPECT_TRUE(BitwiseEqual(*got, Seed42Bundle()));
}

}  // namespace
}  // namespace powerlearn
