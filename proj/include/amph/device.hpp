#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "amph/config.hpp"
#include "amph/mem.hpp"
#include "amph/pools.hpp"
#include "amph/status.hpp"

namespace amph {

enum class DeviceKind : uint8_t { host = 0, cpu_sim = 1, gpu_sim = 2 };

const char* device_kind_name(DeviceKind k);
std::optional<DeviceKind> device_kind_from_string(const std::string& s);

/// Simulated cost model for queued operations, in virtual time.
struct DelayModel {
  double latency_s = 0.0;       // fixed cost per copy
  double bytes_per_s = 0.0;     // 0 means infinite bandwidth
  double kernel_latency_s = 0.0;  // fixed cost per kernel launch

  uint64_t copy_ns(uint64_t bytes) const;
  uint64_t kernel_ns() const;
};

struct DeviceDescriptor {
  DeviceId device_id = -1;  ///< -1 requests the next free id; device 0 is always the host
  DeviceKind kind = DeviceKind::host;
  uint64_t memory_capacity = 0;
  int num_compute_queues = 4;
  int num_transfer_queues = 2;  // one per direction, fixed for non-host devices
  std::optional<DelayModel> delay;
  int processing_elements = 1;
  uint64_t scratch_limit = 48 * kKiB;
};

/// Parses a key/value topology file: lines of the form
///   device.<n>.kind = host|cpu|gpu
///   device.<n>.capacity = 256M
///   device.<n>.compute_queues = 4
///   device.<n>.processing_elements = 8
///   device.<n>.latency / bandwidth / kernel_latency (seconds, bytes/s, seconds)
std::vector<DeviceDescriptor> parse_topology(std::istream& in);

enum class EventStatus : uint8_t { pending, complete, failed };

struct EventId {
  uint64_t value = 0;  // 0 is the pre-completed null event
  bool valid() const { return value != 0; }
};

struct EventInfo {
  EventStatus status = EventStatus::pending;
  uint64_t start_ns = 0;   // virtual timestamps
  uint64_t finish_ns = 0;
  DeviceId device = -1;
  int queue = -1;
  std::string diagnostic;  // set when failed
};

class KernelContext;
using KernelFn = std::function<void(KernelContext&)>;

/// Everything a kernel sees while it runs: argument byte views resolved on its
/// device, a scratch region valid only for the duration of the call, and the
/// launch geometry.
class KernelContext {
 public:
  KernelContext(std::vector<std::span<std::byte>> args, std::span<std::byte> scratch,
                uint64_t global_size, int processing_elements, DeviceKind kind)
      : args_(std::move(args)), scratch_(scratch), global_size_(global_size),
        processing_elements_(processing_elements), kind_(kind) {}

  size_t arg_count() const { return args_.size(); }

  std::span<std::byte> arg(size_t i) const {
    if (i >= args_.size()) fail(ErrorCode::invalid_argument, "kernel arg index out of range");
    return args_[i];
  }

  template <typename T>
  std::span<T> arg_as(size_t i) const {
    auto raw = arg(i);
    return {reinterpret_cast<T*>(raw.data()), raw.size() / sizeof(T)};
  }

  std::span<std::byte> scratch() const { return scratch_; }

  template <typename T>
  std::span<T> scratch_as() const {
    return {reinterpret_cast<T*>(scratch_.data()), scratch_.size() / sizeof(T)};
  }

  uint64_t global_size() const { return global_size_; }
  int processing_elements() const { return processing_elements_; }
  DeviceKind device_kind() const { return kind_; }

 private:
  std::vector<std::span<std::byte>> args_;
  std::span<std::byte> scratch_;
  uint64_t global_size_;
  int processing_elements_;
  DeviceKind kind_;
};

struct KernelLaunch {
  const KernelFn* fn = nullptr;
  std::vector<DeviceAllocation> args;
  uint64_t global_size = 0;
  int processing_elements = 1;
  uint64_t scratch_bytes = 0;
};

struct DeviceStats {
  uint64_t alloc_raw_calls = 0;
  uint64_t free_raw_calls = 0;
  uint64_t copies_executed = 0;
  uint64_t copy_bytes = 0;
  uint64_t kernels_executed = 0;
};

/// Owns the simulated devices: isolated memory spaces, FIFO operation queues,
/// the shared virtual clock, and the per-device progress agents. Device 0 is
/// always the host. All entry points are thread safe.
class DeviceManager {
 public:
  explicit DeviceManager(const RuntimeConfig& cfg);
  ~DeviceManager();

  DeviceManager(const DeviceManager&) = delete;
  DeviceManager& operator=(const DeviceManager&) = delete;

  DeviceId register_device(DeviceDescriptor desc);
  void start();  ///< freezes the topology; spawns agents in dedicated mode
  bool started() const { return started_; }

  /// True while the calling thread is inside a kernel implementation; used to
  /// reject re-entrant runtime calls from kernels.
  static bool in_kernel();

  int device_count() const;
  const DeviceDescriptor& descriptor(DeviceId d) const;
  std::vector<DeviceId> devices_of_kind(DeviceKind k) const;
  void set_direct_pair(DeviceId a, DeviceId b, bool capable);
  bool direct_pair(DeviceId a, DeviceId b) const;

  // --- raw memory ---
  std::optional<DeviceAllocation> alloc_raw(DeviceId d, uint64_t size);
  void free_raw(const DeviceAllocation& a);
  uint64_t free_bytes(DeviceId d) const;
  uint64_t live_allocation_bytes(DeviceId d) const;

  // --- queues ---
  /// Queue ids on a multi-queue device: 0 = host-to-device transfers,
  /// 1 = device-to-host transfers, 2.. = compute. With multi-queue disabled
  /// (and on the host) everything shares queue 0.
  int h2d_queue(DeviceId d) const;
  int d2h_queue(DeviceId d) const;
  int compute_queue(DeviceId d, int i) const;
  int queue_count(DeviceId d) const;

  EventId enqueue_copy(const MemRef& src, const MemRef& dst, uint64_t size, DeviceId queue_device,
                       int queue_id);
  EventId enqueue_kernel(DeviceId d, KernelLaunch launch, int queue_id);

  EventStatus poll_event(EventId e) const;
  EventInfo event_info(EventId e) const;
  int poll_queue(DeviceId d, int queue_id);  ///< completions since the last poll of this queue

  /// Starts startable ops and completes ops due at the current virtual time;
  /// advances the clock when the device is stalled on future completions.
  bool progress(DeviceId d);
  bool pump();  ///< progress every device once; returns whether anything moved
  void wait_event(EventId e);

  uint64_t now_ns() const { return now_ns_.load(); }

  // --- space access (internal + audits) ---
  std::span<std::byte> span_of(const DeviceAllocation& a, uint64_t offset, uint64_t size);
  std::span<const std::byte> debug_peek(const DeviceAllocation& a) const;
  bool allocation_live(const DeviceAllocation& a) const;
  /// Ops currently referencing the allocation; freeing while nonzero is an error.
  int inflight_ops(const DeviceAllocation& a) const;

  DeviceStats stats(DeviceId d) const;
  const RequestPoolStats& op_pool_stats(DeviceId d) const;
  void dump_stats(std::ostream& os) const;

 private:
  struct QueueOp {
    enum class Kind : uint8_t { copy, kernel } kind = Kind::copy;
    QueueOp* next = nullptr;  // IntrusiveQueue hook
    uint64_t event = 0;
    MemRef src, dst;
    uint64_t size = 0;
    KernelLaunch launch;
    uint64_t start_ns = 0;
    uint64_t finish_ns = 0;
    bool started = false;
  };

  struct Queue {
    IntrusiveQueue<QueueOp> ops;
    uint64_t avail_ns = 0;       // virtual time the queue frees up
    uint64_t completed = 0;      // total ops completed
    uint64_t last_reported = 0;  // watermark for poll_queue
  };

  struct RawRange {
    uint64_t size = 0;
    uint64_t serial = 0;
  };

  struct Device {
    DeviceDescriptor desc;
    std::vector<std::byte> space;
    FreeList arena;
    std::map<uint64_t, RawRange> ranges;  // offset -> live raw allocation
    std::vector<Queue> queues;
    std::unique_ptr<RequestPool<QueueOp>> op_pool;
    DeviceStats stats;
    std::vector<std::byte> scratch_buf;
    mutable std::mutex mu;
    std::thread agent;

    Device(DeviceDescriptor d, size_t queue_count, bool pools_enabled);
  };

  Device& dev(DeviceId d);
  const Device& dev(DeviceId d) const;
  EventId new_event(DeviceId d, int queue);
  void set_event(uint64_t id, EventStatus st, uint64_t start, uint64_t finish,
                 std::string diag = {});
  void start_ready_ops(Device& d);      // under d.mu
  bool complete_due_ops(Device& d);     // under d.mu
  uint64_t min_pending_finish(Device& d);  // under d.mu
  void execute(Device& d, QueueOp& op, EventStatus& status, std::string& diag);
  std::span<std::byte> resolve(const MemRef& ref, uint64_t size);
  void bump_ref(const MemRef& ref, int delta);
  void bump_alloc(const DeviceAllocation& a, int delta);
  int inflight_overlapping(DeviceId d, uint64_t offset, uint64_t size) const;
  uint64_t op_duration(const Device& d, const QueueOp& op) const;
  void agent_loop(DeviceId d, std::atomic<bool>& stop);

  RuntimeConfig cfg_;
  mutable std::mutex topo_mu_;
  std::vector<std::unique_ptr<Device>> devices_;
  std::set<std::pair<DeviceId, DeviceId>> direct_pairs_;
  bool started_ = false;
  std::atomic<bool> stopping_{false};

  std::atomic<uint64_t> now_ns_{0};
  mutable std::mutex ev_mu_;
  std::deque<EventInfo> events_;  // index = event id - 1
  std::atomic<uint64_t> next_event_{1};

  // in-flight reference counts, keyed by the referencing allocation; kept in a
  // side table so completion on one device can release a reference into
  // another device's space without taking that device's mutex
  mutable std::mutex inflight_mu_;
  std::map<std::tuple<DeviceId, uint64_t, uint64_t>, int> inflight_;
};

}  // namespace amph
