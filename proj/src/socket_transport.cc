#include "amph/socket_transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cerrno>
#include <cstring>
#include <thread>

namespace amph {

namespace {

using Clock = std::chrono::steady_clock;

void set_nonblocking(int fd) {
  int flags = fcntl(fd, F_GETFL, 0);
  if (flags < 0 || fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) {
    throw Error(ErrorCode::io_error, "fcntl: " + std::string(std::strerror(errno)));
  }
}

void set_nodelay(int fd) {
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

sockaddr_in parse_addr(const std::string& spec) {
  auto colon = spec.rfind(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::config_error, "address needs host:port, got '" + spec + "'");
  }
  std::string host = spec.substr(0, colon);
  int port = std::stoi(spec.substr(colon + 1));
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(uint16_t(port));
  if (inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
    throw Error(ErrorCode::config_error, "bad host address '" + host + "'");
  }
  return sa;
}

void put_u32(std::byte* p, uint32_t v) {
  for (int i = 0; i < 4; i++) p[i] = std::byte((v >> (8 * i)) & 0xff);
}

uint32_t get_u32(const std::byte* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; i++) v |= uint32_t(p[i]) << (8 * i);
  return v;
}

/// Writes the whole buffer, waiting for POLLOUT whenever the socket is full.
void write_all(int fd, const std::byte* data, size_t size) {
  size_t off = 0;
  while (off < size) {
    ssize_t n = ::send(fd, data + off, size - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += size_t(n);
      continue;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
      pollfd pf{fd, POLLOUT, 0};
      ::poll(&pf, 1, 100);
      continue;
    }
    throw Error(ErrorCode::io_error, "send: " + std::string(std::strerror(errno)));
  }
}

}  // namespace

SocketTransport::SocketTransport(Rank self, std::vector<std::string> addrs, int timeout_ms)
    : self_(self) {
  if (self >= addrs.size()) {
    throw Error(ErrorCode::config_error, "rank out of range for the address table");
  }
  peers_.resize(addrs.size());

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::io_error, "socket: " + std::string(std::strerror(errno)));
  int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in sa = parse_addr(addrs[self]);
  if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) < 0) {
    throw Error(ErrorCode::io_error, "bind " + addrs[self] + ": " + std::strerror(errno));
  }
  if (listen(listen_fd_, int(addrs.size())) < 0) {
    throw Error(ErrorCode::io_error, "listen: " + std::string(std::strerror(errno)));
  }
  set_nonblocking(listen_fd_);
  connect_mesh(addrs, timeout_ms);
}

void SocketTransport::connect_mesh(const std::vector<std::string>& addrs, int timeout_ms) {
  const Rank ranks = Rank(addrs.size());
  auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);

  // Dial every lower rank; they accept from us. Dials retry because the
  // peer's listener may not exist yet.
  for (Rank peer = 0; peer < self_; peer++) {
    sockaddr_in sa = parse_addr(addrs[peer]);
    int fd = -1;
    for (;;) {
      fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw Error(ErrorCode::io_error, "socket: " + std::string(std::strerror(errno)));
      if (connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0) break;
      ::close(fd);
      if (Clock::now() >= deadline) {
        throw Error(ErrorCode::io_error, "timed out dialing rank " + std::to_string(peer));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    std::byte preamble[4];
    put_u32(preamble, self_);
    write_all(fd, preamble, 4);
    set_nonblocking(fd);
    set_nodelay(fd);
    peers_[peer].fd = fd;
  }

  // Accept every higher rank; the preamble tells us which one arrived.
  Rank expected = ranks - 1 - self_;
  Rank accepted = 0;
  while (accepted < expected) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) {
        if (Clock::now() >= deadline) {
          throw Error(ErrorCode::io_error, "timed out accepting peers");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        continue;
      }
      throw Error(ErrorCode::io_error, "accept: " + std::string(std::strerror(errno)));
    }
    std::byte preamble[4];
    size_t got = 0;
    while (got < 4) {
      ssize_t n = ::recv(fd, preamble + got, 4 - got, 0);
      if (n > 0) {
        got += size_t(n);
      } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
      } else {
        ::close(fd);
        throw Error(ErrorCode::io_error, "peer hung up during the rank preamble");
      }
    }
    Rank peer = get_u32(preamble);
    if (peer <= self_ || peer >= ranks || peers_[peer].fd != -1) {
      ::close(fd);
      throw Error(ErrorCode::protocol_error, "unexpected rank preamble " + std::to_string(peer));
    }
    set_nonblocking(fd);
    set_nodelay(fd);
    peers_[peer].fd = fd;
    accepted++;
  }
}

SocketTransport::~SocketTransport() {
  for (auto& p : peers_) {
    if (p.fd >= 0) ::close(p.fd);
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void SocketTransport::send(Rank to, std::vector<std::byte> frame) {
  if (to >= peers_.size()) throw Error(ErrorCode::invalid_argument, "send to unknown rank");
  if (to == self_) {
    self_frames_.push_back(std::move(frame));
    return;
  }
  int fd = peers_[to].fd;
  std::byte len[4];
  put_u32(len, uint32_t(frame.size()));
  write_all(fd, len, 4);
  if (!frame.empty()) write_all(fd, frame.data(), frame.size());
}

void SocketTransport::read_ready(Rank from) {
  auto& peer = peers_[from];
  std::byte buf[16384];
  for (;;) {
    ssize_t n = ::recv(peer.fd, buf, sizeof(buf), 0);
    if (n > 0) {
      peer.inbox.insert(peer.inbox.end(), buf, buf + n);
      if (size_t(n) < sizeof(buf)) return;
      continue;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) return;
    if (n == 0) throw Error(ErrorCode::io_error, "rank " + std::to_string(from) + " disconnected");
    throw Error(ErrorCode::io_error, "recv: " + std::string(std::strerror(errno)));
  }
}

std::optional<Frame> SocketTransport::poll() {
  if (!self_frames_.empty()) {
    Frame f;
    f.from = self_;
    f.bytes = std::move(self_frames_.front());
    self_frames_.pop_front();
    return f;
  }

  const Rank ranks = Rank(peers_.size());
  for (Rank i = 0; i < ranks; i++) {
    Rank from = (poll_cursor_ + i) % ranks;
    if (from == self_) continue;
    auto& peer = peers_[from];
    read_ready(from);
    if (peer.inbox.size() < 4) continue;
    uint32_t len = get_u32(peer.inbox.data());
    if (peer.inbox.size() < 4 + size_t(len)) continue;
    Frame f;
    f.from = from;
    f.bytes.assign(peer.inbox.begin() + 4, peer.inbox.begin() + 4 + len);
    peer.inbox.erase(peer.inbox.begin(), peer.inbox.begin() + 4 + len);
    poll_cursor_ = (from + 1) % ranks;
    return f;
  }
  return std::nullopt;
}

std::vector<std::unique_ptr<SocketTransport>> SocketTransport::local_mesh(Rank ranks,
                                                                          int timeout_ms) {
  // Every rank binds an ephemeral port first so the full address table is
  // known before anyone dials.
  std::vector<std::unique_ptr<SocketTransport>> out;
  std::vector<std::string> addrs(ranks);
  for (Rank r = 0; r < ranks; r++) {
    auto t = std::unique_ptr<SocketTransport>(new SocketTransport(r));
    t->peers_.resize(ranks);
    t->listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (t->listen_fd_ < 0) throw Error(ErrorCode::io_error, "socket: " + std::string(std::strerror(errno)));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = 0;
    inet_pton(AF_INET, "127.0.0.1", &sa.sin_addr);
    if (bind(t->listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) < 0 ||
        listen(t->listen_fd_, int(ranks)) < 0) {
      throw Error(ErrorCode::io_error, "bind/listen: " + std::string(std::strerror(errno)));
    }
    socklen_t slen = sizeof(sa);
    getsockname(t->listen_fd_, reinterpret_cast<sockaddr*>(&sa), &slen);
    set_nonblocking(t->listen_fd_);
    addrs[r] = "127.0.0.1:" + std::to_string(ntohs(sa.sin_port));
    out.push_back(std::move(t));
  }
  // Dials would deadlock if done rank by rank (rank 0 accepts only while
  // rank 1 dials), so each rank finishes its mesh on its own thread.
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(ranks);
  for (Rank r = 0; r < ranks; r++) {
    workers.emplace_back([&, r] {
      try {
        out[r]->connect_mesh(addrs, timeout_ms);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace amph
