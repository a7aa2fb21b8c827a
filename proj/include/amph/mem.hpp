#pragma once

#include <cstddef>
#include <cstdint>

namespace amph {

using DeviceId = int32_t;
inline constexpr DeviceId kHostDevice = 0;

/// A live range inside one device's memory space. `serial` disambiguates
/// reuses of the same offset so stale handles are caught on free.
struct DeviceAllocation {
  DeviceId device_id = -1;
  uint64_t offset = 0;
  uint64_t size = 0;
  uint64_t serial = 0;

  bool valid() const { return device_id >= 0 && size > 0; }
};

/// A copy endpoint: either a slice of a device allocation or a raw host range.
/// Raw host ranges are legal endpoints (the host address space is directly
/// reachable); device ranges are bounds-checked against their space.
struct MemRef {
  DeviceAllocation alloc;
  uint64_t offset = 0;  // within the allocation
  std::byte* host_ptr = nullptr;

  static MemRef device(const DeviceAllocation& a, uint64_t off = 0) {
    MemRef r;
    r.alloc = a;
    r.offset = off;
    return r;
  }
  static MemRef host(std::byte* p) {
    MemRef r;
    r.host_ptr = p;
    return r;
  }
  static MemRef host(const std::byte* p) { return host(const_cast<std::byte*>(p)); }
  bool is_host_ptr() const { return host_ptr != nullptr; }
};

}  // namespace amph
