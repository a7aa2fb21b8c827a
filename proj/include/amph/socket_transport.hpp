#pragma once

#include <memory>
#include <string>
#include <vector>

#include "amph/transport.hpp"

namespace amph {

/// Full-mesh TCP transport. Each pair of ranks shares one connection: the
/// higher rank dials the lower rank's listener and identifies itself with a
/// 4-byte little-endian rank preamble. Frames travel as a 4-byte
/// little-endian length followed by the frame bytes.
class SocketTransport final : public Transport {
 public:
  /// `addrs[r]` is "host:port" for rank r. Binds the local address, then
  /// dials lower ranks and accepts higher ones, retrying dials until
  /// `timeout_ms` elapses so ranks may start in any order.
  SocketTransport(Rank self, std::vector<std::string> addrs, int timeout_ms = 10000);
  ~SocketTransport() override;

  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  Rank rank() const override { return self_; }
  Rank rank_count() const override { return Rank(peers_.size()); }
  void send(Rank to, std::vector<std::byte> frame) override;
  std::optional<Frame> poll() override;

  /// Builds a complete mesh on 127.0.0.1 with ephemeral ports, for tests
  /// that run every rank inside one process.
  static std::vector<std::unique_ptr<SocketTransport>> local_mesh(Rank ranks,
                                                                  int timeout_ms = 10000);

 private:
  struct Peer {
    int fd = -1;
    std::vector<std::byte> inbox;  // bytes read but not yet framed
  };

  explicit SocketTransport(Rank self) : self_(self) {}
  void connect_mesh(const std::vector<std::string>& addrs, int timeout_ms);
  void read_ready(Rank from);

  Rank self_ = 0;
  int listen_fd_ = -1;
  std::vector<Peer> peers_;
  std::deque<std::vector<std::byte>> self_frames_;  // rank-local sends, delivered FIFO
  Rank poll_cursor_ = 0;
};

}  // namespace amph
