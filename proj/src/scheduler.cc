#include "amph/scheduler.hpp"

#include <algorithm>

namespace amph {

namespace {

/// Least-outstanding device of the preferred kind with spare capacity;
/// ties break toward the lowest device id.
std::optional<DeviceId> pick_device(const SchedulerContext& ctx, DeviceKind pref) {
  std::optional<DeviceId> best;
  int best_load = 0;
  for (const auto& l : ctx.loads) {
    if (l.kind != pref) continue;
    if (l.outstanding >= l.inflight_cap) continue;
    if (!best || l.outstanding < best_load) {
      best = l.device;
      best_load = l.outstanding;
    }
  }
  return best;
}

}  // namespace

void FifoLeastLoadedPolicy::push(const SchedTask& task) {
  std::lock_guard<std::mutex> g(mu_);
  queue_.push_back(task);
  size_.fetch_add(1, std::memory_order_relaxed);
}

std::optional<SchedPick> FifoLeastLoadedPolicy::pop(const SchedulerContext& ctx) {
  if (size_.load(std::memory_order_relaxed) == 0) return std::nullopt;
  std::lock_guard<std::mutex> g(mu_);
  for (size_t i = 0; i < queue_.size(); ++i) {
    auto dev = pick_device(ctx, queue_[i].device_pref);
    if (!dev) continue;
    SchedPick pick{queue_[i].id, *dev};
    queue_.erase(queue_.begin() + static_cast<long>(i));
    size_.fetch_sub(1, std::memory_order_relaxed);
    return pick;
  }
  return std::nullopt;
}

void RoundRobinPolicy::push(const SchedTask& task) {
  std::lock_guard<std::mutex> g(mu_);
  queue_.push_back(task);
  size_.fetch_add(1, std::memory_order_relaxed);
}

std::optional<SchedPick> RoundRobinPolicy::pop(const SchedulerContext& ctx) {
  if (size_.load(std::memory_order_relaxed) == 0) return std::nullopt;
  std::lock_guard<std::mutex> g(mu_);
  for (size_t i = 0; i < queue_.size(); ++i) {
    const SchedTask& t = queue_[i];
    std::vector<DeviceId> matching;
    for (const auto& l : ctx.loads) {
      if (l.kind == t.device_pref && l.outstanding < l.inflight_cap) matching.push_back(l.device);
    }
    if (matching.empty()) continue;
    std::sort(matching.begin(), matching.end());
    DeviceId dev = matching[rotation_++ % matching.size()];
    SchedPick pick{t.id, dev};
    queue_.erase(queue_.begin() + static_cast<long>(i));
    size_.fetch_sub(1, std::memory_order_relaxed);
    return pick;
  }
  return std::nullopt;
}

std::unique_ptr<SchedulerPolicy> make_policy(const std::string& name) {
  if (name == "fifo-least-loaded") return std::make_unique<FifoLeastLoadedPolicy>();
  if (name == "round-robin") return std::make_unique<RoundRobinPolicy>();
  fail(ErrorCode::config_error, "unknown scheduler policy '" + name + "'");
}

}  // namespace amph
