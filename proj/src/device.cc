#include "amph/device.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace amph {

namespace {
thread_local bool tl_in_kernel = false;
}

bool DeviceManager::in_kernel() { return tl_in_kernel; }

const char* device_kind_name(DeviceKind k) {
  switch (k) {
    case DeviceKind::host: return "host";
    case DeviceKind::cpu_sim: return "cpu";
    case DeviceKind::gpu_sim: return "gpu";
  }
  return "?";
}

std::optional<DeviceKind> device_kind_from_string(const std::string& s) {
  if (s == "host") return DeviceKind::host;
  if (s == "cpu" || s == "cpu_sim") return DeviceKind::cpu_sim;
  if (s == "gpu" || s == "gpu_sim") return DeviceKind::gpu_sim;
  return std::nullopt;
}

uint64_t DelayModel::copy_ns(uint64_t bytes) const {
  double ns = latency_s * 1e9;
  if (bytes_per_s > 0) ns += static_cast<double>(bytes) / bytes_per_s * 1e9;
  return static_cast<uint64_t>(std::llround(ns));
}

uint64_t DelayModel::kernel_ns() const {
  return static_cast<uint64_t>(std::llround(kernel_latency_s * 1e9));
}

std::vector<DeviceDescriptor> parse_topology(std::istream& in) {
  auto kv = parse_key_values(in);
  std::map<int, DeviceDescriptor> by_index;
  for (const auto& [key, value] : kv) {
    std::istringstream ks(key);
    std::string head, idx, field;
    if (!std::getline(ks, head, '.') || head != "device" || !std::getline(ks, idx, '.') ||
        !std::getline(ks, field)) {
      fail(ErrorCode::config_error, "unrecognized topology key '" + key + "'");
    }
    int n = std::stoi(idx);
    DeviceDescriptor& d = by_index[n];
    d.device_id = n;
    if (field == "kind") {
      auto k = device_kind_from_string(value);
      if (!k) fail(ErrorCode::config_error, "unknown device kind '" + value + "'");
      d.kind = *k;
    } else if (field == "capacity") {
      d.memory_capacity = parse_byte_count(value);
    } else if (field == "compute_queues") {
      d.num_compute_queues = std::stoi(value);
    } else if (field == "processing_elements") {
      d.processing_elements = std::stoi(value);
    } else if (field == "scratch_limit") {
      d.scratch_limit = parse_byte_count(value);
    } else if (field == "latency") {
      if (!d.delay) d.delay.emplace();
      d.delay->latency_s = std::stod(value);
    } else if (field == "bandwidth") {
      if (!d.delay) d.delay.emplace();
      d.delay->bytes_per_s = std::stod(value);
    } else if (field == "kernel_latency") {
      if (!d.delay) d.delay.emplace();
      d.delay->kernel_latency_s = std::stod(value);
    } else {
      fail(ErrorCode::config_error, "unrecognized topology field '" + field + "'");
    }
  }
  std::vector<DeviceDescriptor> out;
  out.reserve(by_index.size());
  for (auto& [n, d] : by_index) out.push_back(std::move(d));
  return out;
}

DeviceManager::Device::Device(DeviceDescriptor d, size_t queue_count, bool pools_enabled)
    : desc(std::move(d)), space(desc.memory_capacity), arena(desc.memory_capacity),
      queues(queue_count),
      op_pool(std::make_unique<RequestPool<QueueOp>>(16, 4096, pools_enabled)) {}

DeviceManager::DeviceManager(const RuntimeConfig& cfg) : cfg_(cfg) {}

DeviceManager::~DeviceManager() {
  stopping_.store(true);
  for (auto& d : devices_) {
    if (d->agent.joinable()) d->agent.join();
  }
}

DeviceId DeviceManager::register_device(DeviceDescriptor desc) {
  std::lock_guard<std::mutex> g(topo_mu_);
  if (started_) fail(ErrorCode::invalid_state, "cannot register devices after start");
  if (desc.memory_capacity == 0) fail(ErrorCode::invalid_argument, "device capacity must be nonzero");
  if (desc.device_id < 0) desc.device_id = static_cast<DeviceId>(devices_.size());
  for (const auto& d : devices_) {
    if (d->desc.device_id == desc.device_id)
      fail(ErrorCode::duplicate_id, "device id " + std::to_string(desc.device_id) + " already registered");
  }
  if (devices_.empty()) {
    if (desc.device_id != kHostDevice || desc.kind != DeviceKind::host)
      fail(ErrorCode::invalid_argument, "device 0 must be the host");
  } else {
    if (desc.kind == DeviceKind::host) fail(ErrorCode::invalid_argument, "only device 0 may be the host");
    if (desc.device_id != static_cast<DeviceId>(devices_.size()))
      fail(ErrorCode::invalid_argument, "device ids must be registered in order");
    if (desc.num_transfer_queues != 2)
      fail(ErrorCode::invalid_argument, "non-host devices use exactly 2 transfer queues");
  }
  if (desc.num_compute_queues < 1) fail(ErrorCode::invalid_argument, "need at least one compute queue");
  if (cfg_.deterministic) desc.delay.reset();

  size_t nqueues = 1;  // host or single-queue mode: everything on queue 0
  bool multi = cfg_.use_multi_queue && desc.kind != DeviceKind::host;
  if (multi) nqueues = 2 + static_cast<size_t>(desc.num_compute_queues);
  devices_.push_back(std::make_unique<Device>(std::move(desc), nqueues, cfg_.use_request_pools));
  return devices_.back()->desc.device_id;
}

void DeviceManager::start() {
  std::lock_guard<std::mutex> g(topo_mu_);
  if (started_) return;
  if (devices_.empty() || devices_[0]->desc.kind != DeviceKind::host)
    fail(ErrorCode::invalid_state, "register the host device before starting");
  started_ = true;
  if (cfg_.progress_mode == ProgressMode::dedicated && !cfg_.deterministic) {
    for (auto& d : devices_) {
      DeviceId id = d->desc.device_id;
      d->agent = std::thread([this, id] { agent_loop(id, stopping_); });
    }
  }
}

int DeviceManager::device_count() const {
  std::lock_guard<std::mutex> g(topo_mu_);
  return static_cast<int>(devices_.size());
}

DeviceManager::Device& DeviceManager::dev(DeviceId d) {
  if (d < 0 || static_cast<size_t>(d) >= devices_.size())
    fail(ErrorCode::not_found, "no device " + std::to_string(d));
  return *devices_[static_cast<size_t>(d)];
}

const DeviceManager::Device& DeviceManager::dev(DeviceId d) const {
  return const_cast<DeviceManager*>(this)->dev(d);
}

const DeviceDescriptor& DeviceManager::descriptor(DeviceId d) const { return dev(d).desc; }

std::vector<DeviceId> DeviceManager::devices_of_kind(DeviceKind k) const {
  std::lock_guard<std::mutex> g(topo_mu_);
  std::vector<DeviceId> out;
  for (const auto& d : devices_)
    if (d->desc.kind == k) out.push_back(d->desc.device_id);
  return out;
}

void DeviceManager::set_direct_pair(DeviceId a, DeviceId b, bool capable) {
  std::lock_guard<std::mutex> g(topo_mu_);
  auto key = std::minmax(a, b);
  if (capable) {
    direct_pairs_.insert({key.first, key.second});
  } else {
    direct_pairs_.erase({key.first, key.second});
  }
}

bool DeviceManager::direct_pair(DeviceId a, DeviceId b) const {
  std::lock_guard<std::mutex> g(topo_mu_);
  auto key = std::minmax(a, b);
  return direct_pairs_.count({key.first, key.second}) > 0;
}

std::optional<DeviceAllocation> DeviceManager::alloc_raw(DeviceId d, uint64_t size) {
  Device& D = dev(d);
  std::lock_guard<std::mutex> g(D.mu);
  if (size == 0) fail(ErrorCode::invalid_argument, "zero-size allocation");
  D.stats.alloc_raw_calls++;
  auto offset = D.arena.allocate(size);
  if (!offset) return std::nullopt;  // out of device memory: caller may evict and retry
  static std::atomic<uint64_t> serial{1};
  DeviceAllocation a;
  a.device_id = d;
  a.offset = *offset;
  a.size = size;
  a.serial = serial.fetch_add(1);
  D.ranges[a.offset] = RawRange{size, a.serial};
  return a;
}

void DeviceManager::free_raw(const DeviceAllocation& a) {
  Device& D = dev(a.device_id);
  std::lock_guard<std::mutex> g(D.mu);
  auto it = D.ranges.find(a.offset);
  if (it == D.ranges.end() || it->second.serial != a.serial)
    fail(ErrorCode::double_free, "allocation not live (device " + std::to_string(a.device_id) +
                                     " offset " + std::to_string(a.offset) + ")");
  if (inflight_overlapping(a.device_id, a.offset, it->second.size) > 0)
    fail(ErrorCode::invalid_state, "freeing an allocation with in-flight operations");
  D.stats.free_raw_calls++;
  D.arena.release(a.offset, it->second.size);
  D.ranges.erase(it);
}

uint64_t DeviceManager::free_bytes(DeviceId d) const {
  const Device& D = dev(d);
  std::lock_guard<std::mutex> g(D.mu);
  return D.arena.free_bytes();
}

uint64_t DeviceManager::live_allocation_bytes(DeviceId d) const {
  const Device& D = dev(d);
  std::lock_guard<std::mutex> g(D.mu);
  uint64_t total = 0;
  for (const auto& [off, r] : D.ranges) total += r.size;
  return total;
}

int DeviceManager::h2d_queue(DeviceId) const { return 0; }

int DeviceManager::d2h_queue(DeviceId d) const {
  const Device& D = dev(d);
  return D.queues.size() > 1 ? 1 : 0;
}

int DeviceManager::compute_queue(DeviceId d, int i) const {
  const Device& D = dev(d);
  if (D.queues.size() <= 1) return 0;
  int n = static_cast<int>(D.queues.size()) - 2;
  return 2 + (i % n);
}

int DeviceManager::queue_count(DeviceId d) const { return static_cast<int>(dev(d).queues.size()); }

EventId DeviceManager::new_event(DeviceId d, int queue) {
  std::lock_guard<std::mutex> g(ev_mu_);
  EventInfo info;
  info.device = d;
  info.queue = queue;
  events_.push_back(std::move(info));
  return EventId{next_event_.fetch_add(1)};
}

void DeviceManager::set_event(uint64_t id, EventStatus st, uint64_t start, uint64_t finish,
                              std::string diag) {
  std::lock_guard<std::mutex> g(ev_mu_);
  EventInfo& e = events_[id - 1];
  if (e.status != EventStatus::pending) fail(ErrorCode::invalid_state, "event already terminal");
  e.status = st;
  e.start_ns = start;
  e.finish_ns = finish;
  e.diagnostic = std::move(diag);
}

EventStatus DeviceManager::poll_event(EventId e) const {
  if (!e.valid()) return EventStatus::complete;
  std::lock_guard<std::mutex> g(ev_mu_);
  if (e.value >= next_event_.load()) fail(ErrorCode::not_found, "unknown event id");
  return events_[e.value - 1].status;
}

EventInfo DeviceManager::event_info(EventId e) const {
  std::lock_guard<std::mutex> g(ev_mu_);
  if (!e.valid() || e.value >= next_event_.load()) fail(ErrorCode::not_found, "unknown event id");
  return events_[e.value - 1];
}

void DeviceManager::bump_alloc(const DeviceAllocation& a, int delta) {
  if (!a.valid()) return;
  std::lock_guard<std::mutex> g(inflight_mu_);
  auto key = std::make_tuple(a.device_id, a.offset, a.size);
  int& count = inflight_[key];
  count += delta;
  if (count <= 0) inflight_.erase(key);
}

void DeviceManager::bump_ref(const MemRef& ref, int delta) {
  if (ref.is_host_ptr()) return;
  bump_alloc(ref.alloc, delta);
}

int DeviceManager::inflight_overlapping(DeviceId d, uint64_t offset, uint64_t size) const {
  std::lock_guard<std::mutex> g(inflight_mu_);
  int total = 0;
  auto it = inflight_.lower_bound(std::make_tuple(d, uint64_t{0}, uint64_t{0}));
  for (; it != inflight_.end() && std::get<0>(it->first) == d; ++it) {
    uint64_t begin = std::get<1>(it->first);
    uint64_t end = begin + std::get<2>(it->first);
    if (begin < offset + size && offset < end) total += it->second;
  }
  return total;
}

uint64_t DeviceManager::op_duration(const Device& d, const QueueOp& op) const {
  if (!d.desc.delay) return 0;
  if (op.kind == QueueOp::Kind::copy) return d.desc.delay->copy_ns(op.size);
  return d.desc.delay->kernel_ns();
}

EventId DeviceManager::enqueue_copy(const MemRef& src, const MemRef& dst, uint64_t size,
                                    DeviceId queue_device, int queue_id) {
  // validate endpoints up front so misuse surfaces at the call site
  if (!src.is_host_ptr()) {
    if (!allocation_live(src.alloc)) fail(ErrorCode::not_found, "copy source allocation not live");
    if (src.offset + size > src.alloc.size) fail(ErrorCode::invalid_argument, "copy overruns source");
  }
  if (!dst.is_host_ptr()) {
    if (!allocation_live(dst.alloc)) fail(ErrorCode::not_found, "copy destination allocation not live");
    if (dst.offset + size > dst.alloc.size)
      fail(ErrorCode::invalid_argument, "copy overruns destination");
  }
  Device& D = dev(queue_device);
  if (queue_id < 0 || static_cast<size_t>(queue_id) >= D.queues.size())
    fail(ErrorCode::invalid_argument, "no such queue");
  bump_ref(src, 1);
  bump_ref(dst, 1);
  EventId ev = new_event(queue_device, queue_id);
  {
    std::lock_guard<std::mutex> g(D.mu);
    QueueOp* op = D.op_pool->acquire();
    op->kind = QueueOp::Kind::copy;
    op->event = ev.value;
    op->src = src;
    op->dst = dst;
    op->size = size;
    op->launch = {};
    op->started = false;
    D.queues[static_cast<size_t>(queue_id)].ops.push(op);
    start_ready_ops(D);
  }
  return ev;
}

EventId DeviceManager::enqueue_kernel(DeviceId d, KernelLaunch launch, int queue_id) {
  Device& D = dev(d);
  if (launch.fn == nullptr) fail(ErrorCode::invalid_argument, "null kernel");
  if (launch.scratch_bytes > D.desc.scratch_limit)
    fail(ErrorCode::invalid_argument, "scratch request exceeds device limit");
  if (queue_id < 0 || static_cast<size_t>(queue_id) >= D.queues.size())
    fail(ErrorCode::invalid_argument, "no such queue");
  for (const auto& a : launch.args) {
    if (a.device_id != d)
      fail(ErrorCode::invalid_argument, "kernel argument resides on another device's memory space");
    if (!allocation_live(a)) fail(ErrorCode::not_found, "kernel argument allocation not live");
  }
  for (const auto& a : launch.args) bump_alloc(a, 1);
  EventId ev = new_event(d, queue_id);
  {
    std::lock_guard<std::mutex> g(D.mu);
    QueueOp* op = D.op_pool->acquire();
    op->kind = QueueOp::Kind::kernel;
    op->event = ev.value;
    op->src = {};
    op->dst = {};
    op->size = 0;
    op->launch = std::move(launch);
    op->started = false;
    D.queues[static_cast<size_t>(queue_id)].ops.push(op);
    start_ready_ops(D);
  }
  return ev;
}

void DeviceManager::start_ready_ops(Device& D) {
  uint64_t now = now_ns_.load();
  for (Queue& q : D.queues) {
    QueueOp* head = q.ops.front();
    if (head != nullptr && !head->started) {
      head->start_ns = std::max(now, q.avail_ns);
      head->finish_ns = head->start_ns + op_duration(D, *head);
      head->started = true;
      q.avail_ns = head->finish_ns;
    }
  }
}

std::span<std::byte> DeviceManager::resolve(const MemRef& ref, uint64_t size) {
  if (ref.is_host_ptr()) return {ref.host_ptr, size};
  Device& D = dev(ref.alloc.device_id);
  uint64_t begin = ref.alloc.offset + ref.offset;
  if (begin + size > D.space.size()) fail(ErrorCode::invalid_argument, "range outside device space");
  return {D.space.data() + begin, size};
}

void DeviceManager::execute(Device& D, QueueOp& op, EventStatus& status, std::string& diag) {
  status = EventStatus::complete;
  try {
    if (op.kind == QueueOp::Kind::copy) {
      if (op.size > 0) {
        auto s = resolve(op.src, op.size);
        auto d = resolve(op.dst, op.size);
        std::memmove(d.data(), s.data(), op.size);
      }
      D.stats.copies_executed++;
      D.stats.copy_bytes += op.size;
    } else {
      std::vector<std::span<std::byte>> args;
      args.reserve(op.launch.args.size());
      for (const auto& a : op.launch.args) args.push_back(resolve(MemRef::device(a), a.size));
      if (D.scratch_buf.size() < op.launch.scratch_bytes) D.scratch_buf.resize(op.launch.scratch_bytes);
      std::span<std::byte> scratch{D.scratch_buf.data(), op.launch.scratch_bytes};
      KernelContext ctx(std::move(args), scratch, op.launch.global_size,
                        op.launch.processing_elements, D.desc.kind);
      tl_in_kernel = true;
      try {
        (*op.launch.fn)(ctx);
      } catch (...) {
        tl_in_kernel = false;
        throw;
      }
      tl_in_kernel = false;
      D.stats.kernels_executed++;
    }
  } catch (const std::exception& e) {
    status = EventStatus::failed;
    diag = e.what();
  } catch (...) {
    status = EventStatus::failed;
    diag = "kernel raised a non-standard exception";
  }
}

bool DeviceManager::complete_due_ops(Device& D) {
  bool any = false;
  uint64_t now = now_ns_.load();
  for (Queue& q : D.queues) {
    for (;;) {
      QueueOp* head = q.ops.front();
      if (head == nullptr || !head->started || head->finish_ns > now) break;
      q.ops.pop();
      EventStatus status;
      std::string diag;
      execute(D, *head, status, diag);
      // release in-flight references before the event turns visible so a
      // completion observer can immediately free
      if (head->kind == QueueOp::Kind::copy) {
        bump_ref(head->src, -1);
        bump_ref(head->dst, -1);
      } else {
        for (const auto& a : head->launch.args) bump_alloc(a, -1);
      }
      set_event(head->event, status, head->start_ns, head->finish_ns, std::move(diag));
      q.completed++;
      head->launch = {};
      D.op_pool->recycle(head);
      any = true;
      // the next op can now start
      QueueOp* next = q.ops.front();
      if (next != nullptr && !next->started) {
        next->start_ns = std::max(now, q.avail_ns);
        next->finish_ns = next->start_ns + op_duration(D, *next);
        next->started = true;
        q.avail_ns = next->finish_ns;
      }
    }
  }
  return any;
}

uint64_t DeviceManager::min_pending_finish(Device& D) {
  uint64_t best = UINT64_MAX;
  for (Queue& q : D.queues) {
    QueueOp* head = q.ops.front();
    if (head != nullptr && head->started) best = std::min(best, head->finish_ns);
  }
  return best;
}

bool DeviceManager::progress(DeviceId d) {
  Device& D = dev(d);
  std::lock_guard<std::mutex> g(D.mu);
  start_ready_ops(D);
  bool any = complete_due_ops(D);
  if (!any) {
    uint64_t next = min_pending_finish(D);
    if (next != UINT64_MAX) {
      // stalled on a future completion: advance the virtual clock
      uint64_t cur = now_ns_.load();
      while (cur < next && !now_ns_.compare_exchange_weak(cur, next)) {
      }
      any = complete_due_ops(D);
    }
  }
  return any;
}

bool DeviceManager::pump() {
  bool any = false;
  int n = device_count();
  for (DeviceId d = 0; d < n; ++d) any |= progress(d);
  return any;
}

void DeviceManager::wait_event(EventId e) {
  bool agents = started_ && cfg_.progress_mode == ProgressMode::dedicated && !cfg_.deterministic;
  while (poll_event(e) == EventStatus::pending) {
    if (agents) {
      std::this_thread::yield();
    } else {
      pump();
    }
  }
}

int DeviceManager::poll_queue(DeviceId d, int queue_id) {
  Device& D = dev(d);
  std::lock_guard<std::mutex> g(D.mu);
  if (queue_id < 0 || static_cast<size_t>(queue_id) >= D.queues.size())
    fail(ErrorCode::invalid_argument, "no such queue");
  Queue& q = D.queues[static_cast<size_t>(queue_id)];
  uint64_t fresh = q.completed - q.last_reported;
  q.last_reported = q.completed;
  return static_cast<int>(fresh);
}

std::span<std::byte> DeviceManager::span_of(const DeviceAllocation& a, uint64_t offset,
                                            uint64_t size) {
  if (!allocation_live(a)) fail(ErrorCode::not_found, "allocation not live");
  if (offset + size > a.size) fail(ErrorCode::invalid_argument, "range outside allocation");
  return resolve(MemRef::device(a, offset), size);
}

std::span<const std::byte> DeviceManager::debug_peek(const DeviceAllocation& a) const {
  auto* self = const_cast<DeviceManager*>(this);
  return self->span_of(a, 0, a.size);
}

bool DeviceManager::allocation_live(const DeviceAllocation& a) const {
  if (!a.valid()) return false;
  const Device& D = dev(a.device_id);
  std::lock_guard<std::mutex> g(D.mu);
  // exact raw range or a slice of one (pool grant)
  auto it = D.ranges.upper_bound(a.offset);
  if (it == D.ranges.begin()) return false;
  --it;
  return a.offset + a.size <= it->first + it->second.size;
}

int DeviceManager::inflight_ops(const DeviceAllocation& a) const {
  return inflight_overlapping(a.device_id, a.offset, a.size);
}

DeviceStats DeviceManager::stats(DeviceId d) const {
  const Device& D = dev(d);
  std::lock_guard<std::mutex> g(D.mu);
  return D.stats;
}

const RequestPoolStats& DeviceManager::op_pool_stats(DeviceId d) const {
  return dev(d).op_pool->stats();
}

void DeviceManager::dump_stats(std::ostream& os) const {
  int n = device_count();
  for (DeviceId d = 0; d < n; ++d) {
    const Device& D = dev(d);
    std::lock_guard<std::mutex> g(D.mu);
    os << "device " << d << " (" << device_kind_name(D.desc.kind) << ")"
       << " capacity=" << D.desc.memory_capacity << " free=" << D.arena.free_bytes()
       << " alloc_raw=" << D.stats.alloc_raw_calls << " copies=" << D.stats.copies_executed
       << " kernels=" << D.stats.kernels_executed << "\n";
  }
}

void DeviceManager::agent_loop(DeviceId d, std::atomic<bool>& stop) {
  while (!stop.load(std::memory_order_relaxed)) {
    if (!progress(d)) std::this_thread::sleep_for(std::chrono::microseconds(50));
  }
}

}  // namespace amph
