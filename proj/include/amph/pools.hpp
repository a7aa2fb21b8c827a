#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "amph/mem.hpp"
#include "amph/status.hpp"

namespace amph {

/// First-fit offset allocator with immediate coalescing of freed ranges.
/// Backs both the raw per-device arenas and the pooled allocators.
class FreeList {
 public:
  explicit FreeList(uint64_t capacity);

  std::optional<uint64_t> allocate(uint64_t size);
  void release(uint64_t offset, uint64_t size);

  uint64_t capacity() const { return capacity_; }
  uint64_t free_bytes() const { return free_bytes_; }
  uint64_t largest_free() const;
  size_t fragment_count() const { return free_.size(); }

 private:
  uint64_t capacity_;
  uint64_t free_bytes_;
  std::map<uint64_t, uint64_t> free_;  // offset -> size, disjoint, coalesced
};

struct PoolStats {
  uint64_t pool_allocs = 0;     // grants served from the pooled backing
  uint64_t pool_frees = 0;
  uint64_t fallback_allocs = 0; // calls that had to go to the raw allocator
  uint64_t fallback_frees = 0;
  uint64_t high_water = 0;      // peak bytes live inside the backing
  uint64_t live_bytes = 0;
};

/// Pooled allocator over one large backing grant claimed from a raw allocator
/// at startup. Exhaustion (or disabling the pool) falls back to the raw
/// allocator, and every fallback is counted. Thread safe; the size check runs
/// before the lock is taken.
class MemoryPool {
 public:
  using RawAlloc = std::function<std::optional<DeviceAllocation>(uint64_t)>;
  using RawFree = std::function<void(const DeviceAllocation&)>;

  MemoryPool(RawAlloc raw_alloc, RawFree raw_free, uint64_t backing_bytes, bool enabled);
  ~MemoryPool();

  MemoryPool(const MemoryPool&) = delete;
  MemoryPool& operator=(const MemoryPool&) = delete;

  /// Returns nullopt only when both the pool and the raw allocator are out of
  /// memory; the caller decides whether to evict and retry.
  std::optional<DeviceAllocation> allocate(uint64_t size);
  void release(const DeviceAllocation& a);

  bool owns(const DeviceAllocation& a) const;  ///< true only for grants inside the backing
  bool enabled() const { return enabled_; }
  uint64_t backing_bytes() const;
  PoolStats stats() const;

 private:
  RawAlloc raw_alloc_;
  RawFree raw_free_;
  bool enabled_;
  mutable std::mutex mu_;
  std::optional<DeviceAllocation> backing_;
  std::optional<FreeList> list_;
  // live grants inside the backing: offset (absolute) -> size
  std::map<uint64_t, uint64_t> grants_;
  // live fallback raw allocations: offset -> serial (for release routing)
  std::map<uint64_t, uint64_t> fallback_;
  PoolStats stats_;
};

/// FIFO queue with links embedded in the records themselves: no node
/// allocation on enqueue, and an approximate size readable without the lock
/// the caller wraps around it. Single producer / single consumer unless
/// externally synchronized. T must expose `T* next`.
template <typename T>
class IntrusiveQueue {
 public:
  void push(T* rec) {
    rec->next = nullptr;
    if (tail_ == nullptr) {
      head_ = tail_ = rec;
    } else {
      tail_->next = rec;
      tail_ = rec;
    }
    size_.fetch_add(1, std::memory_order_release);
  }

  T* pop() {
    if (head_ == nullptr) return nullptr;
    T* rec = head_;
    head_ = rec->next;
    if (head_ == nullptr) tail_ = nullptr;
    rec->next = nullptr;
    size_.fetch_sub(1, std::memory_order_release);
    return rec;
  }

  T* front() const { return head_; }
  size_t size_approx() const { return size_.load(std::memory_order_acquire); }
  bool empty_approx() const { return size_approx() == 0; }

 private:
  T* head_ = nullptr;
  T* tail_ = nullptr;
  std::atomic<size_t> size_{0};
};

struct RequestPoolStats {
  uint64_t acquires = 0;
  uint64_t reuses = 0;      // served from the recycled stack
  uint64_t allocations = 0; // records newly constructed
  uint64_t capacity = 0;
};

/// Cache of recyclable request records for one agent. Not internally
/// synchronized: each agent owns exactly one pool. Grows by doubling up to a
/// cap when empty; beyond the cap records are plain-allocated (still counted).
template <typename T>
class RequestPool {
 public:
  explicit RequestPool(size_t initial = 8, size_t cap = 4096, bool enabled = true)
      : cap_(cap), enabled_(enabled) {
    if (enabled_) grow(initial == 0 ? 1 : initial);
  }

  ~RequestPool() {
    for (T* r : free_) delete r;
  }

  RequestPool(const RequestPool&) = delete;
  RequestPool& operator=(const RequestPool&) = delete;

  T* acquire() {
    stats_.acquires++;
    if (!free_.empty()) {
      T* r = free_.back();
      free_.pop_back();
      stats_.reuses++;
      return r;
    }
    if (enabled_ && stats_.capacity < cap_) {
      grow(stats_.capacity == 0 ? 1 : stats_.capacity);  // double
      if (!free_.empty()) {
        T* r = free_.back();
        free_.pop_back();
        return r;
      }
    }
    stats_.allocations++;
    return new T();
  }

  void recycle(T* rec) {
    if (!enabled_) {
      delete rec;
      return;
    }
    free_.push_back(rec);
  }

  const RequestPoolStats& stats() const { return stats_; }

 private:
  void grow(size_t n) {
    for (size_t i = 0; i < n; ++i) {
      free_.push_back(new T());
      stats_.allocations++;
    }
    stats_.capacity += n;
  }

  size_t cap_;
  bool enabled_;
  std::vector<T*> free_;
  RequestPoolStats stats_;
};

/// One pool per agent id, matching the per-active-thread recycling scheme.
template <typename T>
class RequestPoolSet {
 public:
  explicit RequestPoolSet(bool enabled = true, size_t initial = 8, size_t cap = 4096)
      : enabled_(enabled), initial_(initial), cap_(cap) {}

  RequestPool<T>& agent(int agent_id) {
    std::lock_guard<std::mutex> g(mu_);
    auto it = pools_.find(agent_id);
    if (it == pools_.end()) {
      it = pools_.emplace(agent_id, std::make_unique<RequestPool<T>>(initial_, cap_, enabled_)).first;
    }
    return *it->second;
  }

  T* acquire(int agent_id) { return agent(agent_id).acquire(); }
  void recycle(int agent_id, T* rec) { agent(agent_id).recycle(rec); }

 private:
  bool enabled_;
  size_t initial_;
  size_t cap_;
  std::mutex mu_;
  std::map<int, std::unique_ptr<RequestPool<T>>> pools_;
};

}  // namespace amph
