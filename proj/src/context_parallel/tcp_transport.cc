// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "longctx/context_parallel.h"
#include "longctx/error.h"

namespace longctx {
namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

bool write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) return false;
    p += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::recv(fd, p, n, 0);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) return false;
    p += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

}  // namespace

struct TcpTransport::Endpoint {
  Fd out;  // to rank + 1
  Fd in;   // from rank - 1
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<std::uint8_t>> queue;
  bool stop = false;
  bool write_failed = false;
  std::thread writer;

  void run() {
    while (true) {
      std::vector<std::uint8_t> buf;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stop || !queue.empty(); });
        if (queue.empty()) return;
        buf = std::move(queue.front());
        queue.pop_front();
      }
      if (!write_all(out.get(), buf.data(), buf.size())) {
        std::lock_guard lock(mu);
        write_failed = true;
        queue.clear();
        return;
      }
    }
  }
};

TcpTransport::TcpTransport(std::size_t world_size) : world_(world_size) {
  if (world_size == 0) throw ConfigError("transport world_size must be >= 1");
  std::vector<Fd> listeners;
  std::vector<std::uint16_t> ports;
  for (std::size_t r = 0; r < world_; ++r) {
    Fd l(::socket(AF_INET, SOCK_STREAM, 0));
    if (l.get() < 0) throw RingBrokenError(r, errno_text("socket"));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(l.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(l.get(), 1) != 0) {
      throw RingBrokenError(r, errno_text("bind/listen"));
    }
    socklen_t len = sizeof addr;
    ::getsockname(l.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    ports.push_back(ntohs(addr.sin_port));
    listeners.push_back(std::move(l));
  }
  for (std::size_t r = 0; r < world_; ++r) {
    auto ep = std::make_unique<Endpoint>();
    ep->out = Fd(::socket(AF_INET, SOCK_STREAM, 0));
    sockaddr_in peer{};
    peer.sin_family = AF_INET;
    peer.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    peer.sin_port = htons(ports[(r + 1) % world_]);
    if (ep->out.get() < 0 ||
        ::connect(ep->out.get(), reinterpret_cast<sockaddr*>(&peer), sizeof peer) != 0) {
      throw RingBrokenError((r + 1) % world_, errno_text("connect"));
    }
    const int one = 1;
    ::setsockopt(ep->out.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    endpoints_.push_back(std::move(ep));
  }
  // Exactly one peer connects to each listener, so accept order is free.
  for (std::size_t r = 0; r < world_; ++r) {
    endpoints_[r]->in = Fd(::accept(listeners[r].get(), nullptr, nullptr));
    if (endpoints_[r]->in.get() < 0) throw RingBrokenError(r, errno_text("accept"));
  }
  for (auto& ep : endpoints_) ep->writer = std::thread([e = ep.get()] { e->run(); });
}

TcpTransport::~TcpTransport() {
  for (auto& ep : endpoints_) {
    {
      std::lock_guard lock(ep->mu);
      ep->stop = true;
    }
    ep->cv.notify_all();
  }
  for (auto& ep : endpoints_) {
    if (ep->writer.joinable()) ep->writer.join();
  }
}

void TcpTransport::fail(std::size_t rank, const std::string& what) {
  if (aborted_.load()) {
    std::lock_guard lock(abort_mu_);
    throw RingBrokenError(dead_rank_, why_);
  }
  throw RingBrokenError(rank, what);
}

void TcpTransport::send(std::size_t from_rank, const RingFrame& frame) {
  if (from_rank >= world_) throw IndexError("send from unknown rank");
  if (aborted_.load()) fail(from_rank, "ring aborted");
  std::vector<std::uint8_t> bytes = encode_frame(frame);
  Endpoint& ep = *endpoints_[from_rank];
  {
    std::lock_guard lock(ep.mu);
    if (ep.write_failed) {
      const std::size_t peer = (from_rank + 1) % world_;
      fail(peer, "connection to rank " + std::to_string(peer) + " lost");
    }
    ep.queue.push_back(std::move(bytes));
  }
  ep.cv.notify_one();
}

RingFrame TcpTransport::receive(std::size_t rank) {
  if (rank >= world_) throw IndexError("receive on unknown rank");
  if (aborted_.load()) fail(rank, "ring aborted");
  const std::size_t peer = (rank + world_ - 1) % world_;
  const int fd = endpoints_[rank]->in.get();
  std::vector<std::uint8_t> buf(4);
  if (!read_all(fd, buf.data(), 4)) fail(peer, "connection from rank " + std::to_string(peer) + " lost");
  const std::uint32_t len = static_cast<std::uint32_t>(buf[0]) | (std::uint32_t{buf[1]} << 8) |
                            (std::uint32_t{buf[2]} << 16) | (std::uint32_t{buf[3]} << 24);
  buf.resize(4 + static_cast<std::size_t>(len));
  if (!read_all(fd, buf.data() + 4, len)) {
    fail(peer, "connection from rank " + std::to_string(peer) + " lost mid-frame");
  }
  {
    std::lock_guard lock(tap_mu_);
    if (tap_) tap_(rank, buf);
  }
  return decode_frame(buf);
}

void TcpTransport::abort(std::size_t dead_rank, const std::string& why) {
  {
    std::lock_guard lock(abort_mu_);
    if (aborted_.load()) return;
    dead_rank_ = dead_rank;
    why_ = why;
    aborted_.store(true);
  }
  // Unblocks readers and writers stuck in the kernel.
  for (auto& ep : endpoints_) {
    ::shutdown(ep->in.get(), SHUT_RDWR);
    ::shutdown(ep->out.get(), SHUT_RDWR);
  }
}

void TcpTransport::set_wire_tap(
    std::function<void(std::size_t rank, std::span<const std::uint8_t>)> tap) {
  std::lock_guard lock(tap_mu_);
  tap_ = std::move(tap);
}

}  // namespace longctx
