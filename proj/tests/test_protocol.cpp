#include <doctest.h>

#include <chrono>
#include <thread>

#include "dmlt/protocol.hpp"
#include "dmlt/rng.hpp"

using namespace dmlt;

TEST_CASE("protocol: frame layout is length-prefixed tag plus body") {
  auto [a, b] = makePipePair();
  std::vector<std::byte> payload = {std::byte{5}, std::byte{0xAB}, std::byte{0xCD}};
  writeFrame(*a, payload);
  // wire bytes: 03 00 00 00 | 05 AB CD
  std::byte raw[7];
  b->readExact(raw, 7);
  CHECK(std::to_integer<uint8_t>(raw[0]) == 3);
  CHECK(std::to_integer<uint8_t>(raw[1]) == 0);
  CHECK(std::to_integer<uint8_t>(raw[4]) == 5);
  CHECK(std::to_integer<uint8_t>(raw[6]) == 0xCD);

  writeFrame(*a, payload);
  std::vector<std::byte> back = readFrame(*b);
  CHECK(back == payload);
}

TEST_CASE("protocol: oversized and empty frames are rejected") {
  auto [a, b] = makePipePair();
  std::vector<std::byte> big(128);
  CHECK_THROWS_WITH_AS(writeFrame(*a, big, 64), doctest::Contains("FrameTooLarge"), Error);

  // hand-written oversize header on the wire
  std::byte header[4] = {std::byte{0xFF}, std::byte{0xFF}, std::byte{0xFF}, std::byte{0x7F}};
  a->write(header, 4);
  CHECK_THROWS_WITH_AS(readFrame(*b, 1024), doctest::Contains("FrameTooLarge"), Error);

  std::byte zero[4] = {std::byte{0}, std::byte{0}, std::byte{0}, std::byte{0}};
  a->write(zero, 4);
  CHECK_THROWS_WITH_AS(readFrame(*b, 1024), doctest::Contains("DecodeError"), Error);
}

TEST_CASE("protocol: message round trips") {
  std::vector<ProtocolMessage> messages = {
      JoinMsg{1, "phone-13"},
      JoinAckMsg{3, "{\"arch\":\"mlp\"}"},
      WeightsBroadcastMsg{42, {std::byte{1}, std::byte{2}}},
      BatchAssignmentMsg{42, {std::byte{3}}},
      GradientUploadMsg{42, 3, 16, {std::byte{9}, std::byte{8}, std::byte{7}}},
      StepAckMsg{42},
      ShutdownMsg{"done"},
  };
  for (const ProtocolMessage& m : messages) {
    std::vector<std::byte> wire = encodeMessage(m);
    ProtocolMessage back = decodeMessage(wire);
    CHECK(messageTag(back) == messageTag(m));
    CHECK(encodeMessage(back) == wire);
  }
  // spot check one body
  ProtocolMessage g = decodeMessage(encodeMessage(GradientUploadMsg{7, 2, 8, {std::byte{0xEE}}}));
  const GradientUploadMsg& gu = std::get<GradientUploadMsg>(g);
  CHECK(gu.step == 7);
  CHECK(gu.workerId == 2);
  CHECK(gu.localBatch == 8);
  CHECK(gu.archive == std::vector<std::byte>{std::byte{0xEE}});
}

TEST_CASE("protocol: decode rejects unknown tags, truncation, trailing bytes") {
  std::vector<std::byte> unknown = {std::byte{99}};
  CHECK_THROWS_WITH_AS(decodeMessage(unknown), doctest::Contains("DecodeError"), Error);

  std::vector<std::byte> join = encodeMessage(JoinMsg{1, "w"});
  std::vector<std::byte> truncated(join.begin(), join.end() - 1);
  CHECK_THROWS_WITH_AS(decodeMessage(truncated), doctest::Contains("DecodeError"), Error);

  std::vector<std::byte> trailing = join;
  trailing.push_back(std::byte{0});
  CHECK_THROWS_WITH_AS(decodeMessage(trailing), doctest::Contains("DecodeError"), Error);
}

TEST_CASE("protocol: fuzz mutated messages never crash") {
  Rng rng(777);
  std::vector<std::vector<std::byte>> seeds;
  seeds.push_back(encodeMessage(JoinMsg{1, "worker"}));
  seeds.push_back(encodeMessage(JoinAckMsg{0, "{}"}));
  seeds.push_back(encodeMessage(GradientUploadMsg{5, 1, 4, std::vector<std::byte>(40)}));
  seeds.push_back(encodeMessage(ShutdownMsg{"bye"}));
  for (int iter = 0; iter < 3000; ++iter) {
    std::vector<std::byte> m = seeds[rng.below(static_cast<uint32_t>(seeds.size()))];
    if (rng.below(2) == 0 && !m.empty()) m.resize(rng.below(static_cast<uint32_t>(m.size() + 1)));
    uint32_t flips = rng.below(5);
    for (uint32_t f = 0; f < flips && !m.empty(); ++f)
      m[rng.below(static_cast<uint32_t>(m.size()))] = static_cast<std::byte>(rng.below(256));
    try {
      decodeMessage(m);
    } catch (const Error&) {
      // typed errors only
    }
  }
}

TEST_CASE("protocol: payload accounting brackets the reference figure") {
  // 11.2M parameters, local batch 64, 3x32x32 uint8 images
  PayloadBreakdown p = payloadAccounting(11200000, 64, {3, 32, 32}, 60);
  CHECK(p.downWeights == p.upGrads);
  CHECK(p.total == p.downWeights + p.downBatch + p.upGrads);
  CHECK(p.total >= 85000000);
  CHECK(p.total <= 95000000);
  // within 5% of 9.0e7
  CHECK(std::abs(static_cast<double>(p.total) - 9.0e7) / 9.0e7 <= 0.05);
}

TEST_CASE("protocol: payload accounting degenerate cases") {
  PayloadBreakdown zero = payloadAccounting(0, 64, {3, 32, 32});
  CHECK(zero.downWeights == 12);  // bare archive header
  CHECK(zero.upGrads == 12);
  CHECK(zero.total == zero.downBatch + 24);

  PayloadBreakdown a = payloadAccounting(1000, 64, {3, 32, 32});
  PayloadBreakdown b = payloadAccounting(1000, 128, {3, 32, 32});
  CHECK(a.downWeights == b.downWeights);  // batch size only affects the batch term
  CHECK(a.upGrads == b.upGrads);
  CHECK(b.downBatch > a.downBatch);
  CHECK(b.downBatch - a.downBatch == 64 * 3 * 32 * 32 + 64 * 4);
}

TEST_CASE("protocol: throttled transport enforces the cap") {
  auto limiter = std::make_shared<BandwidthLimiter>(8e6);  // bits/sec
  auto [rawA, rawB] = makePipePair();
  ThrottledStream a(std::move(rawA), limiter);

  std::vector<std::byte> payload(1000000);  // 1 MB = 8e6 bits -> >= ~1.0 s
  auto start = std::chrono::steady_clock::now();
  std::thread reader([&] {
    std::vector<std::byte> sink(payload.size());
    rawB->readExact(sink.data(), sink.size());
  });
  a.write(payload.data(), payload.size());
  reader.join();
  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(elapsed >= 0.95);
  CHECK(elapsed <= 1.4);
}

TEST_CASE("protocol: 10 MB throughput lands within 10% of the cap") {
  const double cap = 8e7;  // bits/sec -> 10 MB takes ~1 s
  auto limiter = std::make_shared<BandwidthLimiter>(cap);
  auto [rawA, rawB] = makePipePair();
  ThrottledStream a(std::move(rawA), limiter);

  const size_t bytes = 10000000;
  std::vector<std::byte> payload(bytes);
  std::thread reader([&] {
    std::vector<std::byte> sink(bytes);
    rawB->readExact(sink.data(), sink.size());
  });
  auto start = std::chrono::steady_clock::now();
  a.write(payload.data(), payload.size());
  double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  reader.join();
  double measured = bytes * 8.0 / elapsed;
  CHECK(measured >= cap * 0.9);
  CHECK(measured <= cap * 1.1);
}

TEST_CASE("protocol: disabled cap means passthrough, byte-identical") {
  auto [a, b] = makePipePair();
  Rng rng(8);
  std::vector<std::byte> payload(4096);
  for (auto& x : payload) x = static_cast<std::byte>(rng.below(256));
  a->write(payload.data(), payload.size());
  std::vector<std::byte> sink(payload.size());
  b->readExact(sink.data(), sink.size());
  CHECK(sink == payload);
}

TEST_CASE("protocol: concurrent transfers share the link fairly") {
  auto limiter = std::make_shared<BandwidthLimiter>(16e6);
  auto [rawA1, rawB1] = makePipePair();
  auto [rawA2, rawB2] = makePipePair();
  ThrottledStream a1(std::move(rawA1), limiter);
  ThrottledStream a2(std::move(rawA2), limiter);

  std::vector<std::byte> payload(1000000);
  double rate1 = 0, rate2 = 0;
  auto sender = [&payload](ThrottledStream& s, double& rate) {
    auto start = std::chrono::steady_clock::now();
    s.write(payload.data(), payload.size());
    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rate = 8e6 / elapsed;  // bits/sec over this stream's own span
  };
  std::thread drain1([&] { std::vector<std::byte> sink(payload.size()); rawB1->readExact(sink.data(), sink.size()); });
  std::thread drain2([&] { std::vector<std::byte> sink(payload.size()); rawB2->readExact(sink.data(), sink.size()); });
  std::thread t1([&] { sender(a1, rate1); });
  std::thread t2([&] { sender(a2, rate2); });
  t1.join();
  t2.join();
  drain1.join();
  drain2.join();
  // each stream should see roughly half of the 16 Mb/s medium
  CHECK(rate1 > 16e6 * 0.35);
  CHECK(rate1 < 16e6 * 0.65);
  CHECK(rate2 > 16e6 * 0.35);
  CHECK(rate2 < 16e6 * 0.65);
}

TEST_CASE("protocol: tcp loopback stream round trip") {
  TcpListener listener("127.0.0.1", 0);
  std::unique_ptr<Stream> client;
  std::thread connector([&] { client = tcpConnect("127.0.0.1", listener.port()); });
  std::unique_ptr<Stream> server = listener.accept();
  connector.join();

  sendMessage(*client, JoinMsg{kProtocolVersion, "tcp-worker"});
  ProtocolMessage m = receiveMessage(*server);
  CHECK(std::get<JoinMsg>(m).workerName == "tcp-worker");
  sendMessage(*server, ShutdownMsg{"bye"});
  CHECK(std::get<ShutdownMsg>(receiveMessage(*client)).reason == "bye");
}

TEST_CASE("protocol: parseHostPort") {
  auto [host, port] = parseHostPort("127.0.0.1:8080");
  CHECK(host == "127.0.0.1");
  CHECK(port == 8080);
  CHECK_THROWS_WITH_AS(parseHostPort("nohost"), doctest::Contains("InvalidConfig"), Error);
  CHECK_THROWS_WITH_AS(parseHostPort("h:99999"), doctest::Contains("InvalidConfig"), Error);
}
