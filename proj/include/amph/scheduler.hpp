#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "amph/device.hpp"
#include "amph/task.hpp"

namespace amph {

/// What a policy may inspect about a runnable task.
struct SchedTask {
  TaskId id = 0;
  uint32_t kernel_id = 0;
  DeviceKind device_pref = DeviceKind::gpu_sim;
  uint64_t arg_bytes = 0;  ///< total size of the task's objects
};

struct DeviceLoad {
  DeviceId device = -1;
  DeviceKind kind = DeviceKind::gpu_sim;
  int outstanding = 0;   ///< issued-not-retired tasks on this device
  int inflight_cap = 0;  ///< policy should not exceed this outstanding count
};

/// Per-pop view of the machine, assembled by the engine.
struct SchedulerContext {
  std::vector<DeviceLoad> loads;

  const DeviceLoad* find(DeviceId d) const {
    for (const auto& l : loads)
      if (l.device == d) return &l;
    return nullptr;
  }
};

struct SchedPick {
  TaskId task = 0;
  DeviceId device = -1;
};

/// Ordering and placement seam: the engine pushes runnable tasks in, pops
/// (task, device) picks out. Policies must tolerate push concurrent with pop.
class SchedulerPolicy {
 public:
  virtual ~SchedulerPolicy() = default;
  virtual const char* name() const = 0;
  virtual void push(const SchedTask& task) = 0;
  /// Next task to issue and the device to run it on; empty when nothing
  /// queued or every matching device is saturated.
  virtual std::optional<SchedPick> pop(const SchedulerContext& ctx) = 0;
  virtual size_t queued() const = 0;
};

/// Default policy: FIFO task order, least-outstanding-work device of the
/// preferred kind. Skips past tasks whose devices are all saturated so an
/// unrelated later task can still issue.
class FifoLeastLoadedPolicy final : public SchedulerPolicy {
 public:
  const char* name() const override { return "fifo-least-loaded"; }
  void push(const SchedTask& task) override;
  std::optional<SchedPick> pop(const SchedulerContext& ctx) override;
  size_t queued() const override { return size_.load(std::memory_order_relaxed); }

 private:
  mutable std::mutex mu_;
  std::deque<SchedTask> queue_;
  std::atomic<size_t> size_{0};
};

/// Rotates device assignment per pop regardless of load (beyond the in-flight
/// cap). Exists to exercise the policy seam.
class RoundRobinPolicy final : public SchedulerPolicy {
 public:
  const char* name() const override { return "round-robin"; }
  void push(const SchedTask& task) override;
  std::optional<SchedPick> pop(const SchedulerContext& ctx) override;
  size_t queued() const override { return size_.load(std::memory_order_relaxed); }

 private:
  mutable std::mutex mu_;
  std::deque<SchedTask> queue_;
  std::atomic<size_t> size_{0};
  size_t rotation_ = 0;
};

/// Builds a bundled policy by config name ("fifo-least-loaded", "round-robin").
std::unique_ptr<SchedulerPolicy> make_policy(const std::string& name);

}  // namespace amph
