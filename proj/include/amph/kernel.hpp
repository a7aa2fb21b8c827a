#pragma once

#include <deque>
#include <map>
#include <mutex>
#include <string>

#include "amph/device.hpp"

namespace amph {

using KernelId = uint32_t;

/// Maps a kernel id to one implementation per device kind. A task names a
/// kernel id; the engine picks the implementation matching the device the
/// task lands on. Registration is append-only and thread safe.
class KernelRegistry {
 public:
  KernelId register_kernel(std::string name);
  void add_impl(KernelId id, DeviceKind kind, KernelFn fn);

  /// Convenience for kernels whose body is kind-agnostic (the usual case for
  /// the simulated devices): registers the same body for every kind.
  KernelId register_uniform(std::string name, KernelFn fn);

  bool supports(KernelId id, DeviceKind kind) const;
  const KernelFn* lookup(KernelId id, DeviceKind kind) const;
  const std::string& name(KernelId id) const;
  KernelId id_of(const std::string& name) const;
  size_t size() const;

 private:
  struct Entry {
    std::string name;
    std::map<DeviceKind, KernelFn> impls;
  };

  mutable std::mutex mu_;
  std::deque<Entry> entries_;  // deque keeps lookup() pointers stable across registration
  std::map<std::string, KernelId> by_name_;
};

}  // namespace amph
