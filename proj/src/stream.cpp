#include "dmlt/stream.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

namespace dmlt {

void Stream::readExact(std::byte* buf, size_t n) {
  size_t got = 0;
  while (got < n) {
    size_t r = read(buf + got, n - got);
    if (r == 0)
      raise(ErrorCode::ConnectionClosed, "stream ended with " + std::to_string(n - got) +
                                             " bytes outstanding");
    got += r;
  }
}

namespace {

struct PipeBuffer {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::byte> data;
  bool closed = false;
};

class PipeStream : public Stream {
 public:
  PipeStream(std::shared_ptr<PipeBuffer> in, std::shared_ptr<PipeBuffer> out)
      : in_(std::move(in)), out_(std::move(out)) {}

  ~PipeStream() override { close(); }

  size_t read(std::byte* buf, size_t n) override {
    std::unique_lock<std::mutex> lock(in_->mu);
    in_->cv.wait(lock, [&] { return !in_->data.empty() || in_->closed; });
    if (in_->data.empty()) return 0;  // closed and drained
    size_t take = std::min(n, in_->data.size());
    for (size_t i = 0; i < take; ++i) {
      buf[i] = in_->data.front();
      in_->data.pop_front();
    }
    return take;
  }

  void write(const std::byte* buf, size_t n) override {
    std::lock_guard<std::mutex> lock(out_->mu);
    if (out_->closed) raise(ErrorCode::ConnectionClosed, "write to closed pipe");
    out_->data.insert(out_->data.end(), buf, buf + n);
    out_->cv.notify_all();
  }

  void close() override {
    for (auto& side : {in_, out_}) {
      std::lock_guard<std::mutex> lock(side->mu);
      side->closed = true;
      side->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<PipeBuffer> in_, out_;
};

}  // namespace

std::pair<std::unique_ptr<Stream>, std::unique_ptr<Stream>> makePipePair() {
  auto a = std::make_shared<PipeBuffer>();
  auto b = std::make_shared<PipeBuffer>();
  return {std::make_unique<PipeStream>(a, b), std::make_unique<PipeStream>(b, a)};
}

namespace {

class TcpStream : public Stream {
 public:
  explicit TcpStream(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  ~TcpStream() override { close(); }

  size_t read(std::byte* buf, size_t n) override {
    for (;;) {
      ssize_t r = ::recv(fd_, buf, n, 0);
      if (r >= 0) return static_cast<size_t>(r);
      if (errno == EINTR) continue;
      raise(ErrorCode::IoError, std::string("recv: ") + std::strerror(errno));
    }
  }

  void write(const std::byte* buf, size_t n) override {
    size_t sent = 0;
    while (sent < n) {
      ssize_t r = ::send(fd_, buf + sent, n - sent, MSG_NOSIGNAL);
      if (r < 0) {
        if (errno == EINTR) continue;
        if (errno == EPIPE || errno == ECONNRESET)
          raise(ErrorCode::ConnectionClosed, "peer closed the connection");
        raise(ErrorCode::IoError, std::string("send: ") + std::strerror(errno));
      }
      sent += static_cast<size_t>(r);
    }
  }

  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
};

sockaddr_in makeAddr(const std::string& host, uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
  } else if (host == "localhost") {
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    raise(ErrorCode::InvalidConfig, "bad IPv4 address '" + host + "'");
  }
  return addr;
}

}  // namespace

TcpListener::TcpListener(const std::string& host, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) raise(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = makeAddr(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    raise(ErrorCode::IoError, std::string("bind: ") + std::strerror(errno));
  if (::listen(fd_, 64) != 0) raise(ErrorCode::IoError, std::string("listen: ") + std::strerror(errno));
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Stream> TcpListener::accept() {
  for (;;) {
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_unique<TcpStream>(fd);
    if (errno == EINTR) continue;
    raise(ErrorCode::IoError, std::string("accept: ") + std::strerror(errno));
  }
}

std::unique_ptr<Stream> tcpConnect(const std::string& host, uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) raise(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr = makeAddr(host.empty() ? "127.0.0.1" : host, port);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    int err = errno;
    ::close(fd);
    raise(ErrorCode::IoError, std::string("connect: ") + std::strerror(err));
  }
  return std::make_unique<TcpStream>(fd);
}

std::unique_ptr<Stream> tcpConnectRetry(const std::string& host, uint16_t port,
                                        std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    try {
      return tcpConnect(host, port);
    } catch (const Error&) {
      if (std::chrono::steady_clock::now() >= deadline) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }
}

std::pair<std::string, uint16_t> parseHostPort(const std::string& address) {
  size_t colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 >= address.size())
    raise(ErrorCode::InvalidConfig, "expected host:port, got '" + address + "'");
  int port = 0;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    raise(ErrorCode::InvalidConfig, "bad port in '" + address + "'");
  }
  if (port < 0 || port > 65535) raise(ErrorCode::InvalidConfig, "port out of range in '" + address + "'");
  return {address.substr(0, colon), static_cast<uint16_t>(port)};
}

BandwidthLimiter::BandwidthLimiter(double bitsPerSecond)
    : bitsPerSecond_(bitsPerSecond), nextFree_(std::chrono::steady_clock::now()) {
  if (bitsPerSecond <= 0) raise(ErrorCode::InvalidConfig, "bandwidth cap must be positive");
}

void BandwidthLimiter::acquire(size_t bytes) {
  std::chrono::steady_clock::time_point releaseAt;
  bool hadToWait = false;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto now = std::chrono::steady_clock::now();
    if (nextFree_ < now) nextFree_ = now;  // idle time earns no credit
    auto cost = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(static_cast<double>(bytes) * 8.0 / bitsPerSecond_));
    nextFree_ += cost;
    releaseAt = nextFree_;
    hadToWait = releaseAt > now;
  }
  if (!hadToWait) return;
  std::this_thread::sleep_until(releaseAt);
  // return measured scheduler overshoot to the schedule, so sustained
  // transfers track the cap instead of leaking every wakeup's latency
  auto late = std::chrono::steady_clock::now() - releaseAt;
  constexpr auto kMaxCorrection = std::chrono::milliseconds(10);
  if (late > std::chrono::steady_clock::duration::zero()) {
    std::lock_guard<std::mutex> lock(mu_);
    nextFree_ -= std::min(late, std::chrono::steady_clock::duration(kMaxCorrection));
  }
}

namespace {
constexpr size_t kThrottleChunk = 64 * 1024;
}

ThrottledStream::ThrottledStream(std::unique_ptr<Stream> inner,
                                 std::shared_ptr<BandwidthLimiter> limiter,
                                 double perWriteLatencySec)
    : inner_(std::move(inner)),
      limiter_(std::move(limiter)),
      perWriteLatencySec_(perWriteLatencySec) {}

size_t ThrottledStream::read(std::byte* buf, size_t n) {
  size_t got = inner_->read(buf, std::min(n, kThrottleChunk));
  if (got > 0 && limiter_) limiter_->acquire(got);
  return got;
}

void ThrottledStream::write(const std::byte* buf, size_t n) {
  if (perWriteLatencySec_ > 0)
    std::this_thread::sleep_for(std::chrono::duration<double>(perWriteLatencySec_));
  size_t sent = 0;
  while (sent < n) {
    size_t chunk = std::min(kThrottleChunk, n - sent);
    if (limiter_) limiter_->acquire(chunk);
    inner_->write(buf + sent, chunk);
    sent += chunk;
  }
}

void ThrottledStream::close() { inner_->close(); }

namespace {

void putU32LE(std::byte* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

uint32_t getU32LE(const std::byte* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(std::to_integer<uint8_t>(p[i])) << (8 * i);
  return v;
}

}  // namespace

void writeFrame(Stream& stream, std::span<const std::byte> payload, uint64_t maxFrame) {
  if (payload.empty()) raise(ErrorCode::ProtocolError, "refusing to write empty frame");
  if (payload.size() > maxFrame)
    raise(ErrorCode::FrameTooLarge, std::to_string(payload.size()) + " > max " + std::to_string(maxFrame));
  // one write per frame: fewer wakeups, and latency emulation counts messages
  std::vector<std::byte> wire(4 + payload.size());
  putU32LE(wire.data(), static_cast<uint32_t>(payload.size()));
  std::memcpy(wire.data() + 4, payload.data(), payload.size());
  stream.write(wire.data(), wire.size());
}

std::vector<std::byte> readFrame(Stream& stream, uint64_t maxFrame,
                                 std::chrono::steady_clock::time_point* firstByteAt) {
  std::byte header[4];
  stream.readExact(header, 1);
  if (firstByteAt) *firstByteAt = std::chrono::steady_clock::now();
  stream.readExact(header + 1, 3);
  uint32_t length = getU32LE(header);
  if (length == 0) raise(ErrorCode::DecodeError, "zero-length frame");
  if (length > maxFrame)
    raise(ErrorCode::FrameTooLarge, std::to_string(length) + " > max " + std::to_string(maxFrame));
  std::vector<std::byte> payload(length);
  stream.readExact(payload.data(), length);
  return payload;
}

}  // namespace dmlt
