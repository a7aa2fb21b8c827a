#pragma once

#include <iosfwd>
#include <memory>
#include <vector>

#include "amph/engine.hpp"

namespace amph {

/// Owns one process-local runtime stack: devices, object store, kernel
/// registry, and the task engine wired to the configured scheduler policy.
class Runtime {
 public:
  Runtime(const RuntimeConfig& cfg, const std::vector<DeviceDescriptor>& topology);
  ~Runtime();

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  /// Host plus `accelerators` identical simulated devices.
  static std::vector<DeviceDescriptor> simple_topology(int accelerators,
                                                       uint64_t host_mem = 256 * kMiB,
                                                       uint64_t accel_mem = 64 * kMiB,
                                                       DeviceKind kind = DeviceKind::gpu_sim);

  DeviceManager& devices() { return mgr_; }
  ObjectStore& objects() { return *store_; }
  KernelRegistry& kernels() { return kernels_; }
  Engine& engine() { return *engine_; }
  const RuntimeConfig& config() const { return cfg_; }

  /// One full progress pass (devices, transfers, tasks); true if anything moved.
  bool pump();

  void dump_stats(std::ostream& os) const;

 private:
  RuntimeConfig cfg_;
  DeviceManager mgr_;
  KernelRegistry kernels_;
  std::unique_ptr<ObjectStore> store_;
  std::unique_ptr<Engine> engine_;
};

}  // namespace amph
