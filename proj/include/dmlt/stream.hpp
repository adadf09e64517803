#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmlt/error.hpp"

namespace dmlt {

// Reliable byte stream. Implementations: in-process pipes, TCP, and the
// throttled/counting decorators below.
class Stream {
 public:
  virtual ~Stream() = default;

  // Returns the number of bytes read (>=1), or 0 at end of stream.
  virtual size_t read(std::byte* buf, size_t n) = 0;
  virtual void write(const std::byte* buf, size_t n) = 0;
  virtual void close() = 0;

  // Raises ConnectionClosed if the stream ends first.
  void readExact(std::byte* buf, size_t n);
};

std::pair<std::unique_ptr<Stream>, std::unique_ptr<Stream>> makePipePair();

class TcpListener {
 public:
  explicit TcpListener(const std::string& host, uint16_t port);  // port 0 = ephemeral
  ~TcpListener();
  uint16_t port() const { return port_; }
  std::unique_ptr<Stream> accept();

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

std::unique_ptr<Stream> tcpConnect(const std::string& host, uint16_t port);
std::unique_ptr<Stream> tcpConnectRetry(const std::string& host, uint16_t port,
                                        std::chrono::milliseconds timeout);

// "host:port" -> pair; raises InvalidConfig on malformed input.
std::pair<std::string, uint16_t> parseHostPort(const std::string& address);

// Token-bucket pacing shared by any number of streams; concurrent transfers
// split the capacity between them like a shared medium.
class BandwidthLimiter {
 public:
  explicit BandwidthLimiter(double bitsPerSecond);
  void acquire(size_t bytes);  // blocks until the bytes fit under the cap

 private:
  std::mutex mu_;
  double bitsPerSecond_;
  std::chrono::steady_clock::time_point nextFree_;
};

// Paces both directions of the inner stream through a limiter (may be null
// for latency-only links). Writes are chunked so concurrent streams
// interleave fairly; each write call additionally pays the configured
// per-message latency, emulating serialization plus propagation delay.
class ThrottledStream : public Stream {
 public:
  ThrottledStream(std::unique_ptr<Stream> inner, std::shared_ptr<BandwidthLimiter> limiter,
                  double perWriteLatencySec = 0.0);
  size_t read(std::byte* buf, size_t n) override;
  void write(const std::byte* buf, size_t n) override;
  void close() override;

 private:
  std::unique_ptr<Stream> inner_;
  std::shared_ptr<BandwidthLimiter> limiter_;
  double perWriteLatencySec_;
};

struct StreamCounters {
  std::atomic<uint64_t> bytesRead{0};
  std::atomic<uint64_t> bytesWritten{0};
};

class CountingStream : public Stream {
 public:
  CountingStream(std::unique_ptr<Stream> inner, std::shared_ptr<StreamCounters> counters)
      : inner_(std::move(inner)), counters_(std::move(counters)) {}
  size_t read(std::byte* buf, size_t n) override {
    size_t got = inner_->read(buf, n);
    counters_->bytesRead += got;
    return got;
  }
  void write(const std::byte* buf, size_t n) override {
    inner_->write(buf, n);
    counters_->bytesWritten += n;
  }
  void close() override { inner_->close(); }

 private:
  std::unique_ptr<Stream> inner_;
  std::shared_ptr<StreamCounters> counters_;
};

// Length-prefixed framing: u32 little-endian length, then payload
// (tag byte + body). length = 1 + |body|; zero or oversized lengths are
// protocol errors.
constexpr uint64_t kDefaultMaxFrame = 256ULL << 20;

void writeFrame(Stream& stream, std::span<const std::byte> payload,
                uint64_t maxFrame = kDefaultMaxFrame);
std::vector<std::byte> readFrame(Stream& stream, uint64_t maxFrame = kDefaultMaxFrame,
                                 std::chrono::steady_clock::time_point* firstByteAt = nullptr);

}  // namespace dmlt
