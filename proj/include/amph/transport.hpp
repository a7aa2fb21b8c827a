#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <vector>

#include "amph/status.hpp"

namespace amph {

using Rank = uint32_t;

struct Frame {
  Rank from = 0;
  std::vector<std::byte> bytes;
};

/// One rank's attachment to the message fabric. Frames between a fixed
/// (sender, receiver) pair arrive reliably and in send order; no ordering
/// holds across pairs.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Rank rank() const = 0;
  virtual Rank rank_count() const = 0;
  virtual void send(Rank to, std::vector<std::byte> frame) = 0;
  /// Next delivered frame, if any. Never blocks.
  virtual std::optional<Frame> poll() = 0;
};

/// In-process fabric: mutexed per-channel queues. With a nonzero seed, poll
/// draws the next channel at random (per-channel order still holds), shaking
/// out cross-sender ordering assumptions in tests.
class LoopbackFabric {
 public:
  explicit LoopbackFabric(Rank ranks, uint64_t interleave_seed = 0);

  std::unique_ptr<Transport> endpoint(Rank r);
  Rank rank_count() const { return ranks_; }

  struct Shared {
    Rank ranks;
    uint64_t seed;
    std::mutex mu;
    std::mt19937_64 rng;
    std::vector<std::deque<std::vector<std::byte>>> channels;  // [from * ranks + to]
    std::vector<Rank> next_sender;                             // round-robin cursor per receiver
  };

 private:
  Rank ranks_;
  std::shared_ptr<Shared> shared_;
};

}  // namespace amph
