#pragma once

#include <atomic>
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
#include <vector>

#include "amph/device.hpp"
#include "amph/pools.hpp"

namespace amph {

using ObjectId = uint64_t;
using TaskId = uint64_t;

enum class AccessMode : uint8_t { read, write, readwrite };

const char* access_mode_name(AccessMode m);
inline bool access_reads(AccessMode m) { return m != AccessMode::write; }
inline bool access_writes(AccessMode m) { return m != AccessMode::read; }
inline bool access_conflicts(AccessMode a, AccessMode b) {
  return access_writes(a) || access_writes(b);
}
/// Two modes on the same object within one task collapse to the union.
inline AccessMode access_merge(AccessMode a, AccessMode b) {
  if (a == b) return a;
  return AccessMode::readwrite;
}

enum class CopyState : uint8_t { absent, valid, stale };
const char* copy_state_name(CopyState s);

/// Introspection snapshot of one entry in an object's copy table.
struct CopyInfo {
  DeviceId device_id = -1;
  CopyState state = CopyState::absent;
  uint64_t lru_stamp = 0;
  DeviceAllocation alloc;
};

class ObjectStore;

/// Tracks the transfer(s) making an object copy resident on a device: either
/// a single copy or a device-to-host-to-device chain when the pair is not
/// direct-capable. Advanced by ObjectStore::advance(); shareable across
/// threads once handed out.
class TransferTicket {
 public:
  enum class State : uint8_t { moving, done, failed };

  State state() const { return state_.load(std::memory_order_acquire); }
  bool done() const { return state() == State::done; }
  bool failed() const { return state() == State::failed; }
  const std::string& diagnostic() const { return diagnostic_; }

 private:
  friend class ObjectStore;
  std::atomic<State> state_{State::moving};
  std::string diagnostic_;  // written before the failed state is published

  // remaining fields are guarded by the store mutex
  ObjectId obj = 0;
  DeviceId dest = -1;
  bool staged = false;  // two legs through the host copy
  int leg = 1;
  EventId ev;
};

using TicketPtr = std::shared_ptr<TransferTicket>;

/// The payload of a completed host-access future: host bytes pinned for the
/// caller until release.
struct HostView {
  ObjectId object_id = 0;
  AccessMode mode = AccessMode::read;
  std::span<std::byte> bytes;
};

struct HostReq;  // internal queue entry behind HostAccess

/// Future handed back by acquire_host(). Completes once the object is
/// unpinned by conflicting work and any device-to-host transfer has drained.
/// Move-only; destroying it releases the pin.
class HostAccess {
 public:
  HostAccess() = default;
  HostAccess(HostAccess&&) noexcept;
  HostAccess& operator=(HostAccess&&) noexcept;
  HostAccess(const HostAccess&) = delete;
  HostAccess& operator=(const HostAccess&) = delete;
  ~HostAccess();

  bool poll();       ///< advances the store; true once the view is ready
  HostView& wait();  ///< pumps until ready; throws if the request failed
  HostView& view();  ///< requires ready
  void release();    ///< idempotent; returns control of the bytes to the runtime

 private:
  friend class ObjectStore;
  HostAccess(ObjectStore* store, std::shared_ptr<HostReq> req);
  ObjectStore* store_ = nullptr;
  std::shared_ptr<HostReq> req_;
};

struct CopyReq;  // internal state behind CopyFuture

/// Future for copy_to(): completes when the object's bytes have landed in the
/// caller-designated host region.
class CopyFuture {
 public:
  CopyFuture() = default;
  bool poll();
  void wait();

 private:
  friend class ObjectStore;
  CopyFuture(ObjectStore* store, std::shared_ptr<CopyReq> req);
  ObjectStore* store_ = nullptr;
  std::shared_ptr<CopyReq> req_;
};

struct ObjectStoreStats {
  uint64_t objects_created = 0;
  uint64_t objects_destroyed = 0;
  uint64_t transfers_issued = 0;
  uint64_t evictions = 0;
  uint64_t recycled_shell_hits = 0;    // receive-path creations served by the shell pool
  uint64_t recycled_shell_misses = 0;  // receive-path creations that built a fresh record
};

/// Owns every hetero_object of one runtime: per-device copy tables with
/// VALID/STALE/ABSENT coherence, LRU offloading, host-access pinning, and the
/// pooled allocators copies are carved from. All entry points are thread safe;
/// coherence transitions are serialized by one internal mutex.
class ObjectStore {
 public:
  ObjectStore(DeviceManager& devices, const RuntimeConfig& cfg);
  ~ObjectStore();

  ObjectStore(const ObjectStore&) = delete;
  ObjectStore& operator=(const ObjectStore&) = delete;

  // --- lifecycle ---
  ObjectId create(uint64_t size, std::span<const std::byte> init = {});
  /// Receive-path creation: reuses a recycled object shell when the
  /// preallocated pool has one. Same semantics as create() otherwise.
  ObjectId create_received(uint64_t size);
  /// Caps how many destroyed-object shells are retained for create_received.
  void set_shell_pool_capacity(size_t capacity);
  void destroy(ObjectId id);
  bool alive(ObjectId id) const;
  uint64_t size_of(ObjectId id) const;
  bool initialized(ObjectId id) const;  ///< holds at least one VALID copy

  // --- residency & coherence ---
  /// Makes the object's bytes available on `device` for the given access.
  /// READ/READWRITE move data; WRITE only guarantees an allocation. May evict.
  TicketPtr ensure_resident(ObjectId id, DeviceId device, AccessMode mode);
  /// Marks `device` the sole VALID copy (write-invalidate). The caller must
  /// have completed any inbound transfer first; applied by the engine at the
  /// launch edge of task issue and by the communicator when a payload lands.
  void apply_write_invalidate(ObjectId id, DeviceId device);
  /// Allocates (without transferring or marking) a copy slot on `device` and
  /// returns it; the communicator lands wire payloads directly into it.
  DeviceAllocation ensure_copy_allocated(ObjectId id, DeviceId device);

  // --- host access ---
  HostAccess acquire_host(ObjectId id, AccessMode mode);
  CopyFuture copy_to(ObjectId id, std::span<std::byte> destination);

  // --- eviction ---
  /// Offloads least-recently-used unpinned copies from `device` until
  /// `bytes_needed` are free or no candidates remain. Returns copies evicted.
  size_t evict(DeviceId device, uint64_t bytes_needed);
  /// Observer invoked (under internal exclusion: must not reenter the store)
  /// for each evicted copy, in eviction order.
  void set_eviction_observer(std::function<void(ObjectId, DeviceId)> fn);

  // --- task interlock (engine-facing) ---
  /// Registers an incomplete task's access and returns the earlier incomplete
  /// tasks it conflicts with, in registration order.
  std::vector<TaskId> register_task(ObjectId id, TaskId task, AccessMode mode);
  void task_retired(ObjectId id, TaskId task);
  bool has_pending_writer(ObjectId id) const;
  bool task_pending(ObjectId id, TaskId task) const;
  /// True while host pins forbid issuing a task with this access mode.
  bool pin_blocks_task(ObjectId id, AccessMode mode) const;

  // --- introspection ---
  std::vector<CopyInfo> copy_table(ObjectId id) const;
  bool write_was_last_coherence_action(ObjectId id) const;
  std::vector<ObjectId> live_objects() const;
  std::span<const std::byte> peek_copy(ObjectId id, DeviceId device) const;
  void dump_objects(std::ostream& os) const;
  ObjectStoreStats stats() const;
  PoolStats host_pool_stats() const;
  PoolStats device_pool_stats(DeviceId device) const;
  MemoryPool& host_pool();

  // --- progress ---
  /// Advances transfer tickets and the host-access queues; true if anything
  /// moved. Does not pump devices; callers pump the DeviceManager themselves.
  bool advance();
  /// Hook invoked by blocking waits to drive overall progress (set by the
  /// runtime facade to its full pump; defaults to device pump + advance).
  void set_progress_hook(std::function<void()> hook);

  DeviceManager& devices() { return mgr_; }

 private:
  struct Copy {
    DeviceAllocation alloc;
    CopyState state = CopyState::absent;
    uint64_t lru_stamp = 0;
    bool present() const { return alloc.valid(); }
  };

  struct HeteroObject {
    ObjectId id = 0;
    uint64_t size = 0;
    std::vector<Copy> copies;  // indexed by device id
    int read_pins = 0;
    bool write_pin = false;
    std::deque<std::shared_ptr<HostReq>> host_queue;
    std::vector<std::pair<TaskId, AccessMode>> pending_tasks;
    bool write_last = false;  // a write-invalidate was the last coherence action
  };

  HeteroObject& get(ObjectId id);
  const HeteroObject& get(ObjectId id) const;
  size_t evict_locked(DeviceId device, uint64_t bytes_needed);
  DeviceAllocation allocate_copy(HeteroObject& o, DeviceId device);     // under mu_
  void drop_copy(HeteroObject& o, DeviceId device);                     // under mu_
  std::optional<DeviceId> pick_valid_source(const HeteroObject& o) const;
  void mark_arrived(HeteroObject& o, DeviceId device);                  // VALID via transfer
  void apply_invalidate_locked(HeteroObject& o, DeviceId device);
  void touch(HeteroObject& o, DeviceId device);
  bool advance_tickets_locked();
  bool advance_host_queues_locked();
  void admit_host_requests_locked(HeteroObject& o);
  void finish_host_req(HostReq* req);  // release path (called by HostAccess)
  void pump_for_wait();

  DeviceManager& mgr_;
  RuntimeConfig cfg_;
  mutable std::mutex mu_;
  std::map<ObjectId, std::unique_ptr<HeteroObject>> objects_;
  std::set<ObjectId> destroyed_;
  uint64_t next_id_ = 1;
  std::atomic<uint64_t> lru_clock_{1};
  std::vector<std::unique_ptr<MemoryPool>> pools_;  // [device id]; [0] = host staging pool
  std::vector<TicketPtr> tickets_;
  std::vector<std::shared_ptr<HostReq>> host_moving_;
  std::set<ObjectId> host_waiting_;  // objects with queued, unadmitted requests
  std::function<void(ObjectId, DeviceId)> evict_observer_;
  std::function<void()> progress_hook_;
  std::vector<std::unique_ptr<HeteroObject>> shells_;
  size_t shell_pool_capacity_ = 64;
  ObjectStoreStats stats_;

  friend class HostAccess;
  friend class CopyFuture;
};

}  // namespace amph
