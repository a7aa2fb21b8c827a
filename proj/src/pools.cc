#include "amph/pools.hpp"

#include <algorithm>

#include "amph/device.hpp"

namespace amph {

FreeList::FreeList(uint64_t capacity) : capacity_(capacity), free_bytes_(capacity) {
  if (capacity > 0) free_[0] = capacity;
}

std::optional<uint64_t> FreeList::allocate(uint64_t size) {
  if (size == 0 || size > free_bytes_) return std::nullopt;
  for (auto it = free_.begin(); it != free_.end(); ++it) {
    if (it->second < size) continue;
    uint64_t offset = it->first;
    uint64_t remaining = it->second - size;
    free_.erase(it);
    if (remaining > 0) free_[offset + size] = remaining;
    free_bytes_ -= size;
    return offset;
  }
  return std::nullopt;
}

void FreeList::release(uint64_t offset, uint64_t size) {
  if (size == 0) return;
  if (offset + size > capacity_) fail(ErrorCode::invalid_argument, "release beyond capacity");
  auto next = free_.lower_bound(offset);
  if (next != free_.end() && offset + size > next->first)
    fail(ErrorCode::double_free, "released range overlaps a free range");
  if (next != free_.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second > offset)
      fail(ErrorCode::double_free, "released range overlaps a free range");
  }
  free_bytes_ += size;
  // coalesce with the following range
  if (next != free_.end() && next->first == offset + size) {
    size += next->second;
    next = free_.erase(next);
  }
  // coalesce with the preceding range
  if (next != free_.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second == offset) {
      prev->second += size;
      return;
    }
  }
  free_[offset] = size;
}

uint64_t FreeList::largest_free() const {
  uint64_t best = 0;
  for (const auto& [off, sz] : free_) best = std::max(best, sz);
  return best;
}

MemoryPool::MemoryPool(RawAlloc raw_alloc, RawFree raw_free, uint64_t backing_bytes, bool enabled)
    : raw_alloc_(std::move(raw_alloc)), raw_free_(std::move(raw_free)), enabled_(enabled) {
  if (enabled_ && backing_bytes > 0) {
    backing_ = raw_alloc_(backing_bytes);
    if (backing_) list_.emplace(backing_bytes);
  }
}

MemoryPool::~MemoryPool() {
  if (backing_) raw_free_(*backing_);
}

std::optional<DeviceAllocation> MemoryPool::allocate(uint64_t size) {
  if (size == 0) fail(ErrorCode::invalid_argument, "zero-size pool allocation");
  if (backing_) {
    std::lock_guard<std::mutex> g(mu_);
    if (auto local = list_->allocate(size)) {
      DeviceAllocation a = *backing_;
      a.offset += *local;
      a.size = size;
      grants_[a.offset] = size;
      stats_.pool_allocs++;
      stats_.live_bytes += size;
      stats_.high_water = std::max(stats_.high_water, stats_.live_bytes);
      return a;
    }
  }
  auto raw = raw_alloc_(size);
  if (!raw) return std::nullopt;
  std::lock_guard<std::mutex> g(mu_);
  stats_.fallback_allocs++;
  fallback_[raw->offset] = raw->serial;
  return raw;
}

void MemoryPool::release(const DeviceAllocation& a) {
  std::lock_guard<std::mutex> g(mu_);
  if (auto it = grants_.find(a.offset); it != grants_.end() && backing_) {
    if (it->second != a.size) fail(ErrorCode::invalid_argument, "pool release with wrong size");
    list_->release(a.offset - backing_->offset, a.size);
    grants_.erase(it);
    stats_.pool_frees++;
    stats_.live_bytes -= a.size;
    return;
  }
  if (auto it = fallback_.find(a.offset); it != fallback_.end()) {
    fallback_.erase(it);
    stats_.fallback_frees++;
    raw_free_(a);
    return;
  }
  fail(ErrorCode::double_free, "allocation not live in this pool");
}

bool MemoryPool::owns(const DeviceAllocation& a) const {
  std::lock_guard<std::mutex> g(mu_);
  return grants_.count(a.offset) > 0;
}

uint64_t MemoryPool::backing_bytes() const {
  return backing_ ? backing_->size : 0;
}

PoolStats MemoryPool::stats() const {
  std::lock_guard<std::mutex> g(mu_);
  return stats_;
}

}  // namespace amph
