#include "amph/object.hpp"

#include <algorithm>
#include <cstring>
#include <ostream>

namespace amph {

const char* access_mode_name(AccessMode m) {
  switch (m) {
    case AccessMode::read: return "READ";
    case AccessMode::write: return "WRITE";
    case AccessMode::readwrite: return "READWRITE";
  }
  return "?";
}

const char* copy_state_name(CopyState s) {
  switch (s) {
    case CopyState::absent: return "ABSENT";
    case CopyState::valid: return "VALID";
    case CopyState::stale: return "STALE";
  }
  return "?";
}

/// Internal state behind a HostAccess future.
struct HostReq {
  enum class St : uint8_t { queued, moving, ready, released, failed };
  ObjectId obj = 0;
  AccessMode mode = AccessMode::read;
  St st = St::queued;
  bool cancelled = false;
  EventId ev;
  HostView view;
  ErrorCode err = ErrorCode::invalid_state;
  std::string diag;
};

struct CopyReq {
  EventId ev;
  uint64_t bytes = 0;
};

// ---------------------------------------------------------------- HostAccess

HostAccess::HostAccess(ObjectStore* store, std::shared_ptr<HostReq> req)
    : store_(store), req_(std::move(req)) {}

HostAccess::HostAccess(HostAccess&& other) noexcept
    : store_(other.store_), req_(std::move(other.req_)) {
  other.store_ = nullptr;
}

HostAccess& HostAccess::operator=(HostAccess&& other) noexcept {
  if (this != &other) {
    release();
    store_ = other.store_;
    req_ = std::move(other.req_);
    other.store_ = nullptr;
  }
  return *this;
}

HostAccess::~HostAccess() { release(); }

bool HostAccess::poll() {
  if (!store_ || !req_) fail(ErrorCode::invalid_state, "empty host access");
  store_->advance();
  std::lock_guard<std::mutex> g(store_->mu_);
  return req_->st == HostReq::St::ready || req_->st == HostReq::St::failed;
}

HostView& HostAccess::wait() {
  while (!poll()) store_->pump_for_wait();
  std::lock_guard<std::mutex> g(store_->mu_);
  if (req_->st == HostReq::St::failed) fail(req_->err, req_->diag);
  return req_->view;
}

HostView& HostAccess::view() {
  if (!store_ || !req_) fail(ErrorCode::invalid_state, "empty host access");
  std::lock_guard<std::mutex> g(store_->mu_);
  if (req_->st != HostReq::St::ready)
    fail(ErrorCode::invalid_state, "host access is not ready");
  return req_->view;
}

void HostAccess::release() {
  if (store_ && req_) store_->finish_host_req(req_.get());
  store_ = nullptr;
  req_.reset();
}

// ---------------------------------------------------------------- CopyFuture

CopyFuture::CopyFuture(ObjectStore* store, std::shared_ptr<CopyReq> req)
    : store_(store), req_(std::move(req)) {}

bool CopyFuture::poll() {
  if (!store_ || !req_) fail(ErrorCode::invalid_state, "empty copy future");
  return store_->mgr_.poll_event(req_->ev) != EventStatus::pending;
}

void CopyFuture::wait() {
  while (!poll()) store_->pump_for_wait();
  if (store_->mgr_.poll_event(req_->ev) == EventStatus::failed)
    fail(ErrorCode::io_error, "copy failed: " + store_->mgr_.event_info(req_->ev).diagnostic);
}

// --------------------------------------------------------------- ObjectStore

ObjectStore::ObjectStore(DeviceManager& devices, const RuntimeConfig& cfg)
    : mgr_(devices), cfg_(cfg) {
  if (!mgr_.started()) fail(ErrorCode::invalid_state, "device manager must be started first");
  int n = mgr_.device_count();
  pools_.resize(static_cast<size_t>(n));
  for (DeviceId d = 0; d < n; ++d) {
    auto raw_alloc = [this, d](uint64_t size) { return mgr_.alloc_raw(d, size); };
    auto raw_free = [this](const DeviceAllocation& a) { mgr_.free_raw(a); };
    uint64_t backing;
    bool enabled;
    if (d == kHostDevice) {
      backing = cfg_.staging_pool_bytes;
      enabled = cfg_.use_staging_pool;
    } else {
      backing = static_cast<uint64_t>(
          static_cast<double>(mgr_.descriptor(d).memory_capacity) * cfg_.device_pool_fraction);
      enabled = cfg_.use_device_pools;
    }
    pools_[static_cast<size_t>(d)] =
        std::make_unique<MemoryPool>(raw_alloc, raw_free, backing, enabled);
  }
}

ObjectStore::~ObjectStore() = default;

ObjectStore::HeteroObject& ObjectStore::get(ObjectId id) {
  auto it = objects_.find(id);
  if (it != objects_.end()) return *it->second;
  if (destroyed_.count(id)) fail(ErrorCode::destroyed, "object " + std::to_string(id) + " was destroyed");
  fail(ErrorCode::not_found, "no object " + std::to_string(id));
}

const ObjectStore::HeteroObject& ObjectStore::get(ObjectId id) const {
  return const_cast<ObjectStore*>(this)->get(id);
}

ObjectId ObjectStore::create(uint64_t size, std::span<const std::byte> init) {
  if (size == 0) fail(ErrorCode::invalid_argument, "zero-size object");
  if (!init.empty() && init.size() != size)
    fail(ErrorCode::size_mismatch, "initializer size does not match object size");
  std::lock_guard<std::mutex> g(mu_);
  auto obj = std::make_unique<HeteroObject>();
  obj->id = next_id_++;
  obj->size = size;
  obj->copies.resize(static_cast<size_t>(mgr_.device_count()));
  if (!init.empty()) {
    allocate_copy(*obj, kHostDevice);
    auto dst = mgr_.span_of(obj->copies[kHostDevice].alloc, 0, size);
    std::memcpy(dst.data(), init.data(), size);
    obj->copies[kHostDevice].state = CopyState::valid;
    obj->write_last = true;
    touch(*obj, kHostDevice);
  }
  ObjectId id = obj->id;
  objects_[id] = std::move(obj);
  stats_.objects_created++;
  return id;
}

ObjectId ObjectStore::create_received(uint64_t size) {
  if (size == 0) fail(ErrorCode::invalid_argument, "zero-size object");
  std::lock_guard<std::mutex> g(mu_);
  std::unique_ptr<HeteroObject> obj;
  if (!shells_.empty()) {
    obj = std::move(shells_.back());
    shells_.pop_back();
    *obj = HeteroObject{};
    stats_.recycled_shell_hits++;
  } else {
    obj = std::make_unique<HeteroObject>();
    stats_.recycled_shell_misses++;
  }
  obj->id = next_id_++;
  obj->size = size;
  obj->copies.resize(static_cast<size_t>(mgr_.device_count()));
  ObjectId id = obj->id;
  objects_[id] = std::move(obj);
  stats_.objects_created++;
  return id;
}

void ObjectStore::destroy(ObjectId id) {
  std::lock_guard<std::mutex> g(mu_);
  HeteroObject& o = get(id);
  if (!o.pending_tasks.empty())
    fail(ErrorCode::invalid_state, "destroying an object with incomplete tasks");
  if (o.write_pin || o.read_pins > 0 || !o.host_queue.empty())
    fail(ErrorCode::invalid_state, "destroying an object with live host access");
  for (const auto& t : tickets_) {
    if (t->obj == id)
      fail(ErrorCode::invalid_state, "destroying an object with in-flight transfers");
  }
  for (size_t d = 0; d < o.copies.size(); ++d) {
    if (!o.copies[d].present()) continue;
    if (mgr_.inflight_ops(o.copies[d].alloc) > 0)
      fail(ErrorCode::invalid_state, "destroying an object with in-flight transfers");
  }
  for (size_t d = 0; d < o.copies.size(); ++d) {
    if (o.copies[d].present()) pools_[d]->release(o.copies[d].alloc);
  }
  auto node = std::move(objects_[id]);
  objects_.erase(id);
  destroyed_.insert(id);
  stats_.objects_destroyed++;
  if (shells_.size() < shell_pool_capacity_) shells_.push_back(std::move(node));
}

bool ObjectStore::alive(ObjectId id) const {
  std::lock_guard<std::mutex> g(mu_);
  return objects_.count(id) > 0;
}

uint64_t ObjectStore::size_of(ObjectId id) const {
  std::lock_guard<std::mutex> g(mu_);
  return get(id).size;
}

bool ObjectStore::initialized(ObjectId id) const {
  std::lock_guard<std::mutex> g(mu_);
  const HeteroObject& o = get(id);
  return std::any_of(o.copies.begin(), o.copies.end(),
                     [](const Copy& c) { return c.state == CopyState::valid; });
}

DeviceAllocation ObjectStore::allocate_copy(HeteroObject& o, DeviceId device) {
  Copy& c = o.copies[static_cast<size_t>(device)];
  if (c.present()) return c.alloc;
  auto& pool = *pools_[static_cast<size_t>(device)];
  auto a = pool.allocate(o.size);
  while (!a) {
    if (evict_locked(device, o.size) == 0) break;
    a = pool.allocate(o.size);
  }
  if (!a)
    fail(ErrorCode::out_of_device_memory,
         "cannot fit " + std::to_string(o.size) + " bytes on device " + std::to_string(device));
  c.alloc = *a;
  c.state = CopyState::absent;  // bytes not meaningful until marked
  return c.alloc;
}

void ObjectStore::drop_copy(HeteroObject& o, DeviceId device) {
  Copy& c = o.copies[static_cast<size_t>(device)];
  if (!c.present()) return;
  pools_[static_cast<size_t>(device)]->release(c.alloc);
  c = Copy{};
}

std::optional<DeviceId> ObjectStore::pick_valid_source(const HeteroObject& o) const {
  if (o.copies[kHostDevice].state == CopyState::valid) return kHostDevice;
  for (size_t d = 1; d < o.copies.size(); ++d) {
    if (o.copies[d].state == CopyState::valid) return static_cast<DeviceId>(d);
  }
  return std::nullopt;
}

void ObjectStore::mark_arrived(HeteroObject& o, DeviceId device) {
  Copy& c = o.copies[static_cast<size_t>(device)];
  if (c.state != CopyState::valid) {
    c.state = CopyState::valid;
    o.write_last = false;
  }
}

void ObjectStore::apply_invalidate_locked(HeteroObject& o, DeviceId device) {
  Copy& dest = o.copies[static_cast<size_t>(device)];
  if (!dest.present())
    fail(ErrorCode::invalid_state, "write-invalidate target has no allocation");
  dest.state = CopyState::valid;
  for (size_t d = 0; d < o.copies.size(); ++d) {
    if (static_cast<DeviceId>(d) == device) continue;
    if (o.copies[d].state == CopyState::valid) o.copies[d].state = CopyState::stale;
  }
  o.write_last = true;
  touch(o, device);
}

void ObjectStore::touch(HeteroObject& o, DeviceId device) {
  o.copies[static_cast<size_t>(device)].lru_stamp = lru_clock_.fetch_add(1);
}

TicketPtr ObjectStore::ensure_resident(ObjectId id, DeviceId device, AccessMode mode) {
  std::lock_guard<std::mutex> g(mu_);
  HeteroObject& o = get(id);
  if (device < 0 || static_cast<size_t>(device) >= o.copies.size())
    fail(ErrorCode::not_found, "no device " + std::to_string(device));
  Copy& dest = o.copies[static_cast<size_t>(device)];

  auto done_ticket = [&] {
    auto t = std::make_shared<TransferTicket>();
    t->state_.store(TransferTicket::State::done);
    return t;
  };

  if (!access_reads(mode)) {
    allocate_copy(o, device);
    touch(o, device);
    return done_ticket();
  }

  if (dest.state == CopyState::valid) {
    touch(o, device);
    return done_ticket();
  }

  auto src = pick_valid_source(o);
  if (!src)
    fail(ErrorCode::uninitialized_read,
         "object " + std::to_string(id) + " holds no valid copy to read");
  allocate_copy(o, device);
  touch(o, device);

  auto t = std::make_shared<TransferTicket>();
  t->obj = id;
  t->dest = device;
  stats_.transfers_issued++;

  uint64_t n = o.size;
  const DeviceAllocation& src_alloc = o.copies[static_cast<size_t>(*src)].alloc;
  if (*src == kHostDevice) {
    t->ev = mgr_.enqueue_copy(MemRef::device(src_alloc), MemRef::device(dest.alloc), n, device,
                              mgr_.h2d_queue(device));
  } else if (device == kHostDevice) {
    t->ev = mgr_.enqueue_copy(MemRef::device(src_alloc), MemRef::device(dest.alloc), n, *src,
                              mgr_.d2h_queue(*src));
  } else if (mgr_.direct_pair(*src, device)) {
    t->ev = mgr_.enqueue_copy(MemRef::device(src_alloc), MemRef::device(dest.alloc), n, device,
                              mgr_.h2d_queue(device));
  } else {
    // no direct path: stage through the object's host copy
    allocate_copy(o, kHostDevice);
    t->staged = true;
    t->ev = mgr_.enqueue_copy(MemRef::device(src_alloc),
                              MemRef::device(o.copies[kHostDevice].alloc), n, *src,
                              mgr_.d2h_queue(*src));
  }
  tickets_.push_back(t);
  return t;
}

void ObjectStore::apply_write_invalidate(ObjectId id, DeviceId device) {
  std::lock_guard<std::mutex> g(mu_);
  apply_invalidate_locked(get(id), device);
}

DeviceAllocation ObjectStore::ensure_copy_allocated(ObjectId id, DeviceId device) {
  std::lock_guard<std::mutex> g(mu_);
  return allocate_copy(get(id), device);
}

HostAccess ObjectStore::acquire_host(ObjectId id, AccessMode mode) {
  std::lock_guard<std::mutex> g(mu_);
  HeteroObject& o = get(id);
  auto req = std::make_shared<HostReq>();
  req->obj = id;
  req->mode = mode;
  o.host_queue.push_back(req);
  host_waiting_.insert(id);
  admit_host_requests_locked(o);
  if (o.host_queue.empty()) host_waiting_.erase(id);
  return HostAccess(this, std::move(req));
}

void ObjectStore::admit_host_requests_locked(HeteroObject& o) {
  while (!o.host_queue.empty()) {
    std::shared_ptr<HostReq> req = o.host_queue.front();
    if (req->cancelled) {
      o.host_queue.pop_front();
      req->st = HostReq::St::released;
      continue;
    }
    bool task_conflict;
    if (req->mode == AccessMode::read) {
      task_conflict = std::any_of(o.pending_tasks.begin(), o.pending_tasks.end(),
                                  [](const auto& p) { return access_writes(p.second); });
    } else {
      task_conflict = !o.pending_tasks.empty();
    }
    if (task_conflict) break;
    if (o.write_pin) break;
    if (access_writes(req->mode) && o.read_pins > 0) break;

    o.host_queue.pop_front();
    bool needs_data = access_reads(req->mode);
    bool host_valid = o.copies[kHostDevice].state == CopyState::valid;
    if (needs_data && !host_valid && !pick_valid_source(o)) {
      req->st = HostReq::St::failed;
      req->err = ErrorCode::uninitialized_read;
      req->diag = "object " + std::to_string(o.id) + " holds no valid copy to read";
      continue;
    }

    if (access_writes(req->mode)) {
      o.write_pin = true;
    } else {
      o.read_pins++;
    }
    allocate_copy(o, kHostDevice);
    touch(o, kHostDevice);

    if (!needs_data || host_valid) {
      // invalidate at admission so a host write never coexists with a stale peer
      if (access_writes(req->mode)) apply_invalidate_locked(o, kHostDevice);
      req->view = HostView{o.id, req->mode,
                           mgr_.span_of(o.copies[kHostDevice].alloc, 0, o.size)};
      req->st = HostReq::St::ready;
    } else {
      DeviceId src = *pick_valid_source(o);
      req->ev = mgr_.enqueue_copy(MemRef::device(o.copies[static_cast<size_t>(src)].alloc),
                                  MemRef::device(o.copies[kHostDevice].alloc), o.size, src,
                                  mgr_.d2h_queue(src));
      req->st = HostReq::St::moving;
      host_moving_.push_back(req);
      stats_.transfers_issued++;
    }
    if (access_writes(req->mode)) break;  // exclusive pin admitted
  }
}

void ObjectStore::finish_host_req(HostReq* req) {
  std::lock_guard<std::mutex> g(mu_);
  switch (req->st) {
    case HostReq::St::released:
    case HostReq::St::failed:
      return;
    case HostReq::St::queued:
    case HostReq::St::moving:
      req->cancelled = true;  // pins undone when the request surfaces
      return;
    case HostReq::St::ready:
      break;
  }
  auto it = objects_.find(req->obj);
  req->st = HostReq::St::released;
  if (it == objects_.end()) return;
  HeteroObject& o = *it->second;
  if (access_writes(req->mode)) {
    o.write_pin = false;
    apply_invalidate_locked(o, kHostDevice);  // release marks host VALID, others STALE
  } else {
    o.read_pins--;
  }
  admit_host_requests_locked(o);
  if (o.host_queue.empty()) host_waiting_.erase(o.id);
}

CopyFuture ObjectStore::copy_to(ObjectId id, std::span<std::byte> destination) {
  std::lock_guard<std::mutex> g(mu_);
  HeteroObject& o = get(id);
  if (destination.size() < o.size)
    fail(ErrorCode::size_mismatch, "destination smaller than object");
  auto src = pick_valid_source(o);
  if (!src)
    fail(ErrorCode::uninitialized_read,
         "object " + std::to_string(id) + " holds no valid copy to read");
  touch(o, *src);
  const DeviceAllocation& sa = o.copies[static_cast<size_t>(*src)].alloc;
  auto req = std::make_shared<CopyReq>();
  req->bytes = o.size;
  int queue = (*src == kHostDevice) ? 0 : mgr_.d2h_queue(*src);
  req->ev = mgr_.enqueue_copy(MemRef::device(sa), MemRef::host(destination.data()), o.size, *src,
                              queue);
  stats_.transfers_issued++;
  return CopyFuture(this, std::move(req));
}

size_t ObjectStore::evict(DeviceId device, uint64_t bytes_needed) {
  std::lock_guard<std::mutex> g(mu_);
  return evict_locked(device, bytes_needed);
}

size_t ObjectStore::evict_locked(DeviceId device, uint64_t bytes_needed) {
  struct Cand {
    uint64_t stamp;
    ObjectId id;
  };
  std::vector<Cand> cands;
  for (auto& [id, op] : objects_) {
    HeteroObject& o = *op;
    const Copy& c = o.copies[static_cast<size_t>(device)];
    if (!c.present()) continue;
    if (!o.pending_tasks.empty() || o.write_pin || o.read_pins > 0) continue;
    if (mgr_.inflight_ops(c.alloc) > 0) continue;
    cands.push_back({c.lru_stamp, id});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return a.stamp != b.stamp ? a.stamp < b.stamp : a.id < b.id;
  });

  size_t count = 0;
  uint64_t freed = 0;
  for (const Cand& cand : cands) {
    if (freed >= bytes_needed) break;
    HeteroObject& o = *objects_[cand.id];
    Copy& c = o.copies[static_cast<size_t>(device)];
    bool sole_valid = c.state == CopyState::valid;
    if (sole_valid) {
      for (size_t d = 0; d < o.copies.size(); ++d) {
        if (static_cast<DeviceId>(d) != device && o.copies[d].state == CopyState::valid)
          sole_valid = false;
      }
    }
    if (sole_valid) {
      // offload to the host so no data is lost
      allocate_copy(o, kHostDevice);
      EventId ev = mgr_.enqueue_copy(MemRef::device(c.alloc),
                                     MemRef::device(o.copies[kHostDevice].alloc), o.size, device,
                                     mgr_.d2h_queue(device));
      mgr_.wait_event(ev);
      if (mgr_.poll_event(ev) == EventStatus::failed)
        fail(ErrorCode::io_error, "eviction transfer failed: " + mgr_.event_info(ev).diagnostic);
      // the host copy takes the evicted copy's place, so whether a write was
      // the object's last coherence action is unchanged
      bool was_write_last = o.write_last;
      mark_arrived(o, kHostDevice);
      o.write_last = was_write_last;
    }
    drop_copy(o, device);
    freed += o.size;
    count++;
    stats_.evictions++;
    if (evict_observer_) evict_observer_(cand.id, device);
  }
  return count;
}

void ObjectStore::set_eviction_observer(std::function<void(ObjectId, DeviceId)> fn) {
  std::lock_guard<std::mutex> g(mu_);
  evict_observer_ = std::move(fn);
}

std::vector<TaskId> ObjectStore::register_task(ObjectId id, TaskId task, AccessMode mode) {
  std::lock_guard<std::mutex> g(mu_);
  HeteroObject& o = get(id);
  std::vector<TaskId> conflicts;
  for (const auto& [tid, tmode] : o.pending_tasks) {
    if (access_conflicts(tmode, mode)) conflicts.push_back(tid);
  }
  o.pending_tasks.emplace_back(task, mode);
  return conflicts;
}

void ObjectStore::task_retired(ObjectId id, TaskId task) {
  std::lock_guard<std::mutex> g(mu_);
  auto it = objects_.find(id);
  if (it == objects_.end()) return;
  HeteroObject& o = *it->second;
  auto pos = std::find_if(o.pending_tasks.begin(), o.pending_tasks.end(),
                          [&](const auto& p) { return p.first == task; });
  if (pos != o.pending_tasks.end()) o.pending_tasks.erase(pos);
  admit_host_requests_locked(o);
  if (o.host_queue.empty()) host_waiting_.erase(o.id);
}

bool ObjectStore::has_pending_writer(ObjectId id) const {
  std::lock_guard<std::mutex> g(mu_);
  const HeteroObject& o = get(id);
  return std::any_of(o.pending_tasks.begin(), o.pending_tasks.end(),
                     [](const auto& p) { return access_writes(p.second); });
}

bool ObjectStore::task_pending(ObjectId id, TaskId task) const {
  std::lock_guard<std::mutex> g(mu_);
  auto it = objects_.find(id);
  if (it == objects_.end()) return false;
  const HeteroObject& o = *it->second;
  return std::any_of(o.pending_tasks.begin(), o.pending_tasks.end(),
                     [&](const auto& p) { return p.first == task; });
}

void ObjectStore::set_shell_pool_capacity(size_t capacity) {
  std::lock_guard<std::mutex> g(mu_);
  shell_pool_capacity_ = capacity;
  if (shells_.size() > capacity) shells_.resize(capacity);
}

bool ObjectStore::pin_blocks_task(ObjectId id, AccessMode mode) const {
  std::lock_guard<std::mutex> g(mu_);
  const HeteroObject& o = get(id);
  if (o.write_pin) return true;
  return o.read_pins > 0 && access_writes(mode);
}

std::vector<CopyInfo> ObjectStore::copy_table(ObjectId id) const {
  std::lock_guard<std::mutex> g(mu_);
  const HeteroObject& o = get(id);
  std::vector<CopyInfo> out;
  for (size_t d = 0; d < o.copies.size(); ++d) {
    CopyInfo info;
    info.device_id = static_cast<DeviceId>(d);
    info.state = o.copies[d].state;
    info.lru_stamp = o.copies[d].lru_stamp;
    info.alloc = o.copies[d].alloc;
    out.push_back(info);
  }
  return out;
}

bool ObjectStore::write_was_last_coherence_action(ObjectId id) const {
  std::lock_guard<std::mutex> g(mu_);
  return get(id).write_last;
}

std::vector<ObjectId> ObjectStore::live_objects() const {
  std::lock_guard<std::mutex> g(mu_);
  std::vector<ObjectId> out;
  out.reserve(objects_.size());
  for (const auto& [id, o] : objects_) out.push_back(id);
  return out;
}

std::span<const std::byte> ObjectStore::peek_copy(ObjectId id, DeviceId device) const {
  std::lock_guard<std::mutex> g(mu_);
  const HeteroObject& o = get(id);
  const Copy& c = o.copies.at(static_cast<size_t>(device));
  if (!c.present()) fail(ErrorCode::invalid_state, "no copy on that device");
  return mgr_.debug_peek(c.alloc);
}

void ObjectStore::dump_objects(std::ostream& os) const {
  std::lock_guard<std::mutex> g(mu_);
  for (const auto& [id, op] : objects_) {
    const HeteroObject& o = *op;
    os << "object " << id << " size=" << o.size;
    if (o.write_pin || o.read_pins > 0)
      os << " pins=" << o.read_pins << (o.write_pin ? "+W" : "");
    os << " copies:";
    for (size_t d = 0; d < o.copies.size(); ++d) {
      if (!o.copies[d].present() && o.copies[d].state == CopyState::absent) continue;
      os << " dev" << d << "=" << copy_state_name(o.copies[d].state) << "(lru="
         << o.copies[d].lru_stamp << ")";
    }
    os << "\n";
  }
}

ObjectStoreStats ObjectStore::stats() const {
  std::lock_guard<std::mutex> g(mu_);
  return stats_;
}

PoolStats ObjectStore::host_pool_stats() const { return pools_[kHostDevice]->stats(); }

PoolStats ObjectStore::device_pool_stats(DeviceId device) const {
  if (device < 0 || static_cast<size_t>(device) >= pools_.size())
    fail(ErrorCode::not_found, "no device " + std::to_string(device));
  return pools_[static_cast<size_t>(device)]->stats();
}

MemoryPool& ObjectStore::host_pool() { return *pools_[kHostDevice]; }

bool ObjectStore::advance() {
  std::lock_guard<std::mutex> g(mu_);
  bool moved = advance_tickets_locked();
  moved |= advance_host_queues_locked();
  return moved;
}

bool ObjectStore::advance_tickets_locked() {
  bool moved = false;
  for (size_t i = 0; i < tickets_.size();) {
    TicketPtr t = tickets_[i];
    EventStatus st = mgr_.poll_event(t->ev);
    if (st == EventStatus::pending) {
      ++i;
      continue;
    }
    auto oit = objects_.find(t->obj);
    if (st == EventStatus::failed || oit == objects_.end()) {
      t->diagnostic_ = oit == objects_.end() ? "object destroyed during transfer"
                                             : mgr_.event_info(t->ev).diagnostic;
      t->state_.store(TransferTicket::State::failed, std::memory_order_release);
      tickets_.erase(tickets_.begin() + static_cast<long>(i));
      moved = true;
      continue;
    }
    HeteroObject& o = *oit->second;
    if (t->staged && t->leg == 1) {
      mark_arrived(o, kHostDevice);
      t->leg = 2;
      t->ev = mgr_.enqueue_copy(MemRef::device(o.copies[kHostDevice].alloc),
                                MemRef::device(o.copies[static_cast<size_t>(t->dest)].alloc),
                                o.size, t->dest, mgr_.h2d_queue(t->dest));
      ++i;
    } else {
      mark_arrived(o, t->dest);
      t->state_.store(TransferTicket::State::done, std::memory_order_release);
      tickets_.erase(tickets_.begin() + static_cast<long>(i));
    }
    moved = true;
  }
  return moved;
}

bool ObjectStore::advance_host_queues_locked() {
  bool moved = false;
  for (size_t i = 0; i < host_moving_.size();) {
    std::shared_ptr<HostReq> req = host_moving_[i];
    EventStatus st = mgr_.poll_event(req->ev);
    if (st == EventStatus::pending) {
      ++i;
      continue;
    }
    host_moving_.erase(host_moving_.begin() + static_cast<long>(i));
    moved = true;
    auto it = objects_.find(req->obj);
    if (it == objects_.end()) {
      req->st = HostReq::St::failed;
      req->err = ErrorCode::destroyed;
      req->diag = "object destroyed during host access";
      continue;
    }
    HeteroObject& o = *it->second;
    if (st == EventStatus::failed) {
      req->st = HostReq::St::failed;
      req->err = ErrorCode::io_error;
      req->diag = mgr_.event_info(req->ev).diagnostic;
      // undo the pin taken at admission
      if (access_writes(req->mode)) o.write_pin = false;
      else o.read_pins--;
      admit_host_requests_locked(o);
      continue;
    }
    mark_arrived(o, kHostDevice);
    if (req->cancelled) {
      req->st = HostReq::St::released;
      if (access_writes(req->mode)) o.write_pin = false;
      else o.read_pins--;
      admit_host_requests_locked(o);
      continue;
    }
    if (access_writes(req->mode)) apply_invalidate_locked(o, kHostDevice);
    req->view = HostView{o.id, req->mode, mgr_.span_of(o.copies[kHostDevice].alloc, 0, o.size)};
    req->st = HostReq::St::ready;
  }

  if (!host_waiting_.empty()) {
    std::vector<ObjectId> ids(host_waiting_.begin(), host_waiting_.end());
    for (ObjectId id : ids) {
      auto it = objects_.find(id);
      if (it == objects_.end()) {
        host_waiting_.erase(id);
        continue;
      }
      size_t before = it->second->host_queue.size();
      admit_host_requests_locked(*it->second);
      if (it->second->host_queue.size() != before) moved = true;
      if (it->second->host_queue.empty()) host_waiting_.erase(id);
    }
  }
  return moved;
}

void ObjectStore::set_progress_hook(std::function<void()> hook) {
  std::lock_guard<std::mutex> g(mu_);
  progress_hook_ = std::move(hook);
}

void ObjectStore::pump_for_wait() {
  std::function<void()> hook;
  {
    std::lock_guard<std::mutex> g(mu_);
    hook = progress_hook_;
  }
  if (hook) {
    hook();
  } else {
    mgr_.pump();
    advance();
  }
}

}  // namespace amph
