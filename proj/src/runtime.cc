#include "amph/runtime.hpp"

#include <ostream>

namespace amph {

std::vector<DeviceDescriptor> Runtime::simple_topology(int accelerators, uint64_t host_mem,
                                                       uint64_t accel_mem, DeviceKind kind) {
  std::vector<DeviceDescriptor> topo;
  DeviceDescriptor host;
  host.kind = DeviceKind::host;
  host.memory_capacity = host_mem;
  topo.push_back(host);
  for (int i = 0; i < accelerators; ++i) {
    DeviceDescriptor d;
    d.kind = kind;
    d.memory_capacity = accel_mem;
    topo.push_back(d);
  }
  return topo;
}

Runtime::Runtime(const RuntimeConfig& cfg, const std::vector<DeviceDescriptor>& topology)
    : cfg_(cfg), mgr_(cfg) {
  if (topology.empty()) fail(ErrorCode::config_error, "empty device topology");
  for (const DeviceDescriptor& d : topology) mgr_.register_device(d);
  mgr_.start();
  store_ = std::make_unique<ObjectStore>(mgr_, cfg_);
  engine_ = std::make_unique<Engine>(*store_, kernels_, make_policy(cfg_.scheduler_policy), cfg_);
  store_->set_progress_hook([this] { pump(); });
}

Runtime::~Runtime() = default;

bool Runtime::pump() { return engine_->step(); }

void Runtime::dump_stats(std::ostream& os) const {
  mgr_.dump_stats(os);
  auto est = engine_->stats();
  os << "engine: submitted=" << est.submitted << " completed=" << est.completed
     << " failed=" << est.failed << " edges=" << est.dependency_edges << " steps=" << est.steps
     << "\n";
  auto ost = store_->stats();
  os << "objects: created=" << ost.objects_created << " destroyed=" << ost.objects_destroyed
     << " transfers=" << ost.transfers_issued << " evictions=" << ost.evictions << "\n";
  for (DeviceId d = 0; d < mgr_.device_count(); ++d) {
    auto ps = store_->device_pool_stats(d);
    os << "pool dev" << d << ": allocs=" << ps.pool_allocs << " fallbacks=" << ps.fallback_allocs
       << " high_water=" << ps.high_water << "\n";
  }
}

}  // namespace amph
