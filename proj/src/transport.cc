#include "amph/transport.hpp"

namespace amph {

class LoopbackEndpoint final : public Transport {
 public:
  LoopbackEndpoint(std::shared_ptr<LoopbackFabric::Shared> shared, Rank self)
      : shared_(std::move(shared)), self_(self) {}

  Rank rank() const override { return self_; }
  Rank rank_count() const override { return shared_->ranks; }

  void send(Rank to, std::vector<std::byte> frame) override {
    if (to >= shared_->ranks) throw Error(ErrorCode::invalid_argument, "send to unknown rank");
    std::lock_guard<std::mutex> lk(shared_->mu);
    shared_->channels[size_t(self_) * shared_->ranks + to].push_back(std::move(frame));
  }

  std::optional<Frame> poll() override {
    auto* sh = shared_.get();
    std::lock_guard<std::mutex> lk(sh->mu);
    std::vector<Rank> pending;
    for (Rank from = 0; from < sh->ranks; from++) {
      if (!sh->channels[size_t(from) * sh->ranks + self_].empty()) pending.push_back(from);
    }
    if (pending.empty()) return std::nullopt;
    Rank from;
    if (sh->seed != 0) {
      from = pending[sh->rng() % pending.size()];
    } else {
      // Fair deterministic draw: resume the sender scan where the last poll stopped.
      Rank start = sh->next_sender[self_];
      from = pending[0];
      for (Rank p : pending) {
        if (p >= start) {
          from = p;
          break;
        }
      }
      sh->next_sender[self_] = (from + 1) % sh->ranks;
    }
    auto& q = sh->channels[size_t(from) * sh->ranks + self_];
    Frame f;
    f.from = from;
    f.bytes = std::move(q.front());
    q.pop_front();
    return f;
  }

 private:
  std::shared_ptr<LoopbackFabric::Shared> shared_;
  Rank self_;
};

LoopbackFabric::LoopbackFabric(Rank ranks, uint64_t interleave_seed) : ranks_(ranks) {
  if (ranks == 0) throw Error(ErrorCode::config_error, "fabric needs at least one rank");
  shared_ = std::make_shared<Shared>();
  shared_->ranks = ranks;
  shared_->seed = interleave_seed;
  shared_->rng.seed(interleave_seed);
  shared_->channels.resize(size_t(ranks) * ranks);
  shared_->next_sender.assign(ranks, 0);
}

std::unique_ptr<Transport> LoopbackFabric::endpoint(Rank r) {
  if (r >= ranks_) throw Error(ErrorCode::invalid_argument, "endpoint rank out of range");
  return std::make_unique<LoopbackEndpoint>(shared_, r);
}

}  // namespace amph
