#include "amph/comm.hpp"

#include <algorithm>
#include <cstring>
#include <thread>

namespace amph {

namespace {

/// Access registrations the communicator places in the object store use ids
/// from this range so they can never collide with engine task ids.
constexpr TaskId kHoldBase = 1ull << 62;

constexpr uint8_t kNoDeviceHint = 255;

thread_local const Communicator* tl_pumping = nullptr;

struct PumpGuard {
  const Communicator* prev;
  std::atomic<bool>& flag;
  ~PumpGuard() {
    tl_pumping = prev;
    flag.store(false);
  }
};

int size_class_of(uint64_t size) {
  int cls = 6;  // smallest class is 64 bytes
  while ((1ull << cls) < size) cls++;
  return cls;
}

}  // namespace

// ------------------------------------------------------------- CommHandle

struct CommHandle::State {
  std::atomic<bool> done{false};
  std::atomic<bool> failed{false};
  std::mutex mu;
  ErrorCode code = ErrorCode::io_error;
  std::string diag;

  void fail_with(ErrorCode c, const std::string& d) {
    {
      std::lock_guard<std::mutex> lk(mu);
      code = c;
      diag = d;
    }
    failed.store(true);
    done.store(true);
  }
};

bool CommHandle::done() const { return st_ && st_->done.load(); }

bool CommHandle::failed() const { return st_ && st_->failed.load(); }

std::string CommHandle::diagnostic() const {
  if (!st_) return {};
  std::lock_guard<std::mutex> lk(st_->mu);
  return st_->diag;
}

void CommHandle::wait() {
  if (!st_) fail(ErrorCode::invalid_state, "empty communication handle");
  if (tl_pumping == comm_)
    fail(ErrorCode::reentrant_call, "cannot wait on a communication handle inside a handler");
  uint64_t idle = 0;
  while (!st_->done.load()) {
    bool moved = comm_->progress();
    moved |= comm_->runtime().pump();
    if (moved) {
      idle = 0;
    } else if (++idle > (1ull << 24)) {
      fail(ErrorCode::invalid_state, "communication handle stalled: peer not progressing");
    } else {
      std::this_thread::yield();
    }
  }
  if (st_->failed.load()) {
    std::lock_guard<std::mutex> lk(st_->mu);
    throw Error(st_->code, st_->diag);
  }
}

// --------------------------------------------------------------- internals

struct Communicator::SendOp {
  std::shared_ptr<CommHandle::State> handle;
  Rank target = 0;
  WireHeader hdr;

  ObjectId src_object = 0;        // object-backed payload (invoke/put/get-reply)
  std::vector<std::byte> bytes;   // pre-captured host payload, or the staging hop
  TaskId hold = 0;                // read hold on src_object, released at emit
  std::vector<TaskId> conflicts;  // earlier accesses that must retire first

  bool copy_started = false;
  CopyFuture copy;

  bool frames_ready = false;
  bool emitted = false;
  bool completes_at_emit = true;  // get requests complete at reply landing instead
  std::vector<std::byte> inline_frame;   // header + payload in one frame
  std::vector<std::byte> payload_frame;  // second frame of a pair

  uint32_t served_get_callback = 0;  // owner-side callback fired once the reply is out
  Rank served_get_requester = 0;
};

struct Communicator::PendingGet {
  std::shared_ptr<CommHandle::State> handle;
  bool to_object = false;
  ObjectId dest = 0;
  std::span<std::byte> region;
};

struct Communicator::Inbound {
  Rank from = 0;
  WireHeader hdr;
  std::vector<std::byte> frame;
  size_t payload_off = 0;

  std::span<const std::byte> payload() const {
    return std::span<const std::byte>(frame).subspan(payload_off, hdr.payload_size);
  }
};

/// Recycles receive allocations per device in power-of-two size classes,
/// bounded by a per-device byte budget. Disabled, it degrades to plain
/// alloc/free with every acquire counted as a miss.
struct Communicator::ReceiveCache {
  Runtime& rt;
  bool enabled;
  uint64_t budget;

  struct PerDevice {
    std::map<int, std::vector<DeviceAllocation>> free_by_class;
    uint64_t cached_bytes = 0;
  };
  std::vector<PerDevice> dev;
  std::atomic<uint64_t> hits{0};
  std::atomic<uint64_t> misses{0};

  ReceiveCache(Runtime& r, const CommConfig& cfg)
      : rt(r), enabled(cfg.use_receive_cache), budget(cfg.receive_cache_bytes_per_device) {
    dev.resize(size_t(rt.devices().device_count()));
  }

  ~ReceiveCache() {
    for (auto& d : dev) {
      for (auto& [cls, list] : d.free_by_class) {
        for (auto& a : list) rt.devices().free_raw(a);
      }
    }
  }

  DeviceAllocation acquire(DeviceId d, uint64_t size) {
    uint64_t want = enabled ? (1ull << size_class_of(size)) : size;
    if (enabled) {
      auto& lists = dev[size_t(d)].free_by_class;
      auto it = lists.find(size_class_of(size));
      if (it != lists.end() && !it->second.empty()) {
        DeviceAllocation a = it->second.back();
        it->second.pop_back();
        dev[size_t(d)].cached_bytes -= a.size;
        hits++;
        return a;
      }
    }
    misses++;
    if (auto a = rt.devices().alloc_raw(d, want)) return *a;
    // Device full: push resident objects out, then our own idle blocks.
    rt.objects().evict(d, want);
    if (auto a = rt.devices().alloc_raw(d, want)) return *a;
    drop_device(d);
    if (auto a = rt.devices().alloc_raw(d, want)) return *a;
    fail(ErrorCode::out_of_device_memory,
         "no room on device " + std::to_string(d) + " for a received payload of " +
             std::to_string(size) + " bytes");
  }

  void release(const DeviceAllocation& a) {
    if (!enabled || dev[size_t(a.device_id)].cached_bytes + a.size > budget) {
      rt.devices().free_raw(a);
      return;
    }
    dev[size_t(a.device_id)].free_by_class[size_class_of(a.size)].push_back(a);
    dev[size_t(a.device_id)].cached_bytes += a.size;
  }

  void drop_device(DeviceId d) {
    for (auto& [cls, list] : dev[size_t(d)].free_by_class) {
      for (auto& a : list) rt.devices().free_raw(a);
      list.clear();
    }
    dev[size_t(d)].cached_bytes = 0;
  }
};

// ------------------------------------------------------------ Communicator

Communicator::Communicator(Runtime& rt, std::unique_ptr<Transport> transport, CommConfig cfg)
    : rt_(rt), transport_(std::move(transport)), cfg_(cfg) {
  if (!transport_) fail(ErrorCode::invalid_argument, "communicator needs a transport");
  rt_.objects().set_shell_pool_capacity(cfg_.use_object_pool ? cfg_.object_pool_capacity : 0);
  cache_ = std::make_unique<ReceiveCache>(rt_, cfg_);
}

Communicator::~Communicator() = default;

uint32_t Communicator::register_handler(Handler fn) {
  if (!fn) fail(ErrorCode::invalid_argument, "empty handler");
  std::lock_guard<std::mutex> lk(mu_);
  handlers_.push_back(std::move(fn));
  return uint32_t(handlers_.size());
}

MobileObjectRef Communicator::create_mobile(Rank home) {
  if (home >= rank_count()) fail(ErrorCode::invalid_argument, "mobile home rank out of range");
  std::lock_guard<std::mutex> lk(mu_);
  uint64_t id = next_mobile_++;
  mobiles_[id] = home;
  return MobileObjectRef{id};
}

Rank Communicator::mobile_home(MobileObjectRef m) const {
  std::lock_guard<std::mutex> lk(mu_);
  auto it = mobiles_.find(m.id);
  if (it == mobiles_.end())
    fail(ErrorCode::not_found, "unknown mobile object " + std::to_string(m.id));
  return it->second;
}

uint32_t Communicator::validate_handler(uint32_t handler) const {
  std::lock_guard<std::mutex> lk(mu_);
  if (handler == 0 || handler > handlers_.size())
    fail(ErrorCode::unknown_handler, "handler " + std::to_string(handler) + " is not registered");
  return handler;
}

TaskId Communicator::next_hold_id() {
  std::lock_guard<std::mutex> lk(mu_);
  return kHoldBase | next_hold_++;
}

GlobalObjectRef Communicator::global_ref(ObjectId obj) const {
  GlobalObjectRef ref;
  ref.owner = rank();
  ref.object = obj;
  ref.size = rt_.objects().size_of(obj);
  return ref;
}

// ----------------------------------------------------------- send entry

CommHandle Communicator::invoke_remote_raw(Rank target, uint32_t handler,
                                           const DeviceAllocation& buffer, uint64_t size,
                                           DeviceId src_device, DeviceId dst_device) {
  if (DeviceManager::in_kernel())
    fail(ErrorCode::reentrant_call, "communicator entered from inside a kernel");
  if (target >= rank_count()) fail(ErrorCode::invalid_argument, "target rank out of range");
  validate_handler(handler);
  if (dst_device < 0 || dst_device > 254)
    fail(ErrorCode::invalid_argument, "destination device id must fit the wire hint");
  auto& mgr = rt_.devices();
  if (size > 0) {
    if (!mgr.allocation_live(buffer)) fail(ErrorCode::invalid_argument, "source buffer is dead");
    if (buffer.device_id != src_device)
      fail(ErrorCode::invalid_argument, "source buffer does not live on src_device");
    if (size > buffer.size) fail(ErrorCode::size_mismatch, "size exceeds the source buffer");
  }

  auto op = std::make_unique<SendOp>();
  op->handle = std::make_shared<CommHandle::State>();
  op->target = target;
  op->hdr.payload_kind = PayloadKind::raw_device;
  op->hdr.handler_id = handler;
  op->hdr.source_rank = rank();
  op->hdr.target_kind = TargetKind::rank;
  op->hdr.target_id = target;
  op->hdr.payload_size = size;
  op->hdr.object_size = size;
  // Raw messages carry device *ids* in the hint bytes; object messages carry
  // device kinds.
  op->hdr.src_device_hint = uint8_t(src_device);
  op->hdr.dst_device_hint = uint8_t(dst_device);

  // The payload is captured before returning so the caller may immediately
  // reuse the source buffer, and so handlers can echo a buffer that dies at
  // their return.
  if (size > 0) {
    bool one_frame = !cfg_.direct_device && cfg_.use_inline_messages && size <= kInlineCapacity;
    std::span<std::byte> dst;
    if (one_frame) {
      op->inline_frame.resize(kHeaderSize + size);
      dst = std::span<std::byte>(op->inline_frame).subspan(kHeaderSize);
    } else {
      op->payload_frame.resize(size);
      dst = op->payload_frame;
    }
    if (src_device == kHostDevice || cfg_.direct_device) {
      auto src = mgr.span_of(buffer, 0, size);
      std::memcpy(dst.data(), src.data(), size);
    } else if (cfg_.use_copy_to_inline) {
      EventId ev = mgr.enqueue_copy(MemRef::device(buffer), MemRef::host(dst.data()), size,
                                    src_device, mgr.d2h_queue(src_device));
      mgr.wait_event(ev);
      std::lock_guard<std::mutex> lk(mu_);
      stats_.staging_copies++;
    } else {
      op->bytes.resize(size);
      EventId ev = mgr.enqueue_copy(MemRef::device(buffer), MemRef::host(op->bytes.data()), size,
                                    src_device, mgr.d2h_queue(src_device));
      mgr.wait_event(ev);
      std::memcpy(dst.data(), op->bytes.data(), size);
      std::lock_guard<std::mutex> lk(mu_);
      stats_.staging_copies++;
      stats_.host_extra_copies++;
    }
  }
  op->frames_ready = true;

  CommHandle h(this, op->handle);
  {
    std::lock_guard<std::mutex> lk(mu_);
    sendq_[target].push_back(std::move(op));
  }
  return h;
}

CommHandle Communicator::enqueue_object_send(Rank target, WireHeader hdr, ObjectId obj) {
  auto& store = rt_.objects();
  // An uninitialized source is fine if a queued task will write it before the
  // send drains (producer-then-send); emission rechecks once conflicts clear.
  if (!store.initialized(obj) && !store.has_pending_writer(obj))
    fail(ErrorCode::uninitialized_read,
         "object " + std::to_string(obj) + " holds no bytes to send");
  auto op = std::make_unique<SendOp>();
  op->handle = std::make_shared<CommHandle::State>();
  op->target = target;
  op->hdr = hdr;
  op->src_object = obj;
  op->hold = next_hold_id();
  op->conflicts = store.register_task(obj, op->hold, AccessMode::read);
  CommHandle h(this, op->handle);
  {
    std::lock_guard<std::mutex> lk(mu_);
    sendq_[target].push_back(std::move(op));
  }
  return h;
}

CommHandle Communicator::invoke_remote_object(Rank target, uint32_t handler, ObjectId obj,
                                              std::optional<DeviceKind> dst_kind) {
  if (DeviceManager::in_kernel())
    fail(ErrorCode::reentrant_call, "communicator entered from inside a kernel");
  if (target >= rank_count()) fail(ErrorCode::invalid_argument, "target rank out of range");
  validate_handler(handler);
  WireHeader hdr;
  hdr.payload_kind = PayloadKind::hetero_object;
  hdr.handler_id = handler;
  hdr.source_rank = rank();
  hdr.target_kind = TargetKind::rank;
  hdr.target_id = target;
  hdr.payload_size = rt_.objects().size_of(obj);
  hdr.object_size = hdr.payload_size;
  hdr.src_device_hint = kNoDeviceHint;
  hdr.dst_device_hint = dst_kind ? uint8_t(*dst_kind) : kNoDeviceHint;
  return enqueue_object_send(target, hdr, obj);
}

CommHandle Communicator::invoke_remote_object(MobileObjectRef target, uint32_t handler,
                                              ObjectId obj, std::optional<DeviceKind> dst_kind) {
  if (DeviceManager::in_kernel())
    fail(ErrorCode::reentrant_call, "communicator entered from inside a kernel");
  Rank home = mobile_home(target);
  validate_handler(handler);
  WireHeader hdr;
  hdr.payload_kind = PayloadKind::hetero_object;
  hdr.handler_id = handler;
  hdr.source_rank = rank();
  hdr.target_kind = TargetKind::mobile_object;
  hdr.target_id = target.id;
  hdr.payload_size = rt_.objects().size_of(obj);
  hdr.object_size = hdr.payload_size;
  hdr.src_device_hint = kNoDeviceHint;
  hdr.dst_device_hint = dst_kind ? uint8_t(*dst_kind) : kNoDeviceHint;
  return enqueue_object_send(home, hdr, obj);
}

CommHandle Communicator::put(const GlobalObjectRef& ref, ObjectId source, uint32_t callback) {
  if (DeviceManager::in_kernel())
    fail(ErrorCode::reentrant_call, "communicator entered from inside a kernel");
  if (ref.owner >= rank_count()) fail(ErrorCode::invalid_argument, "ref owner rank out of range");
  if (callback) validate_handler(callback);
  if (rt_.objects().size_of(source) != ref.size)
    fail(ErrorCode::size_mismatch, "put source is " + std::to_string(rt_.objects().size_of(source)) +
                                       " bytes, ref wants " + std::to_string(ref.size));
  WireHeader hdr;
  hdr.payload_kind = PayloadKind::put;
  hdr.handler_id = callback;
  hdr.source_rank = rank();
  hdr.target_kind = TargetKind::global_ref;
  hdr.target_id = ref.object;
  hdr.payload_size = ref.size;
  hdr.object_size = ref.size;
  hdr.src_device_hint = kNoDeviceHint;
  hdr.dst_device_hint = kNoDeviceHint;
  return enqueue_object_send(ref.owner, hdr, source);
}

CommHandle Communicator::put(const GlobalObjectRef& ref, std::span<const std::byte> bytes,
                             uint32_t callback) {
  if (DeviceManager::in_kernel())
    fail(ErrorCode::reentrant_call, "communicator entered from inside a kernel");
  if (ref.owner >= rank_count()) fail(ErrorCode::invalid_argument, "ref owner rank out of range");
  if (callback) validate_handler(callback);
  if (bytes.size() != ref.size)
    fail(ErrorCode::size_mismatch, "put payload is " + std::to_string(bytes.size()) +
                                       " bytes, ref wants " + std::to_string(ref.size));
  auto op = std::make_unique<SendOp>();
  op->handle = std::make_shared<CommHandle::State>();
  op->target = ref.owner;
  op->hdr.payload_kind = PayloadKind::put;
  op->hdr.handler_id = callback;
  op->hdr.source_rank = rank();
  op->hdr.target_kind = TargetKind::global_ref;
  op->hdr.target_id = ref.object;
  op->hdr.payload_size = ref.size;
  op->hdr.object_size = ref.size;
  op->hdr.src_device_hint = uint8_t(DeviceKind::host);
  op->hdr.dst_device_hint = kNoDeviceHint;
  bool one_frame =
      !cfg_.direct_device && cfg_.use_inline_messages && bytes.size() <= kInlineCapacity;
  if (one_frame) {
    op->inline_frame.resize(kHeaderSize + bytes.size());
    std::memcpy(op->inline_frame.data() + kHeaderSize, bytes.data(), bytes.size());
  } else {
    op->payload_frame.assign(bytes.begin(), bytes.end());
  }
  op->frames_ready = true;
  CommHandle h(this, op->handle);
  {
    std::lock_guard<std::mutex> lk(mu_);
    sendq_[ref.owner].push_back(std::move(op));
  }
  return h;
}

CommHandle Communicator::get(const GlobalObjectRef& ref, ObjectId destination, uint32_t callback) {
  if (rt_.objects().size_of(destination) != ref.size)
    fail(ErrorCode::size_mismatch, "get destination size does not match the ref");
  auto pg = std::make_unique<PendingGet>();
  pg->to_object = true;
  pg->dest = destination;
  return get_common(ref, std::move(pg), callback);
}

CommHandle Communicator::get(const GlobalObjectRef& ref, std::span<std::byte> destination,
                             uint32_t callback) {
  if (destination.size() != ref.size)
    fail(ErrorCode::size_mismatch, "get destination size does not match the ref");
  auto pg = std::make_unique<PendingGet>();
  pg->region = destination;
  return get_common(ref, std::move(pg), callback);
}

CommHandle Communicator::get_common(const GlobalObjectRef& ref, std::unique_ptr<PendingGet> pg,
                                    uint32_t callback) {
  if (DeviceManager::in_kernel())
    fail(ErrorCode::reentrant_call, "communicator entered from inside a kernel");
  if (ref.owner >= rank_count()) fail(ErrorCode::invalid_argument, "ref owner rank out of range");
  if (callback) validate_handler(callback);
  auto op = std::make_unique<SendOp>();
  op->handle = std::make_shared<CommHandle::State>();
  pg->handle = op->handle;
  op->target = ref.owner;
  op->hdr.payload_kind = PayloadKind::get_request;
  op->hdr.handler_id = callback;
  op->hdr.source_rank = rank();
  op->hdr.target_kind = TargetKind::global_ref;
  op->hdr.target_id = ref.object;
  op->hdr.payload_size = 0;
  op->hdr.object_size = ref.size;
  op->hdr.src_device_hint = kNoDeviceHint;
  op->hdr.dst_device_hint = kNoDeviceHint;
  op->frames_ready = true;
  op->completes_at_emit = false;
  CommHandle h(this, op->handle);
  {
    std::lock_guard<std::mutex> lk(mu_);
    op->hdr.completion_token = next_token_++;
    pending_gets_[op->hdr.completion_token] = std::move(pg);
    sendq_[ref.owner].push_back(std::move(op));
  }
  return h;
}

// ----------------------------------------------------------- send pump

bool Communicator::advance_send(SendOp& op) {
  auto& store = rt_.objects();
  bool moved = false;
  if (!op.frames_ready) {
    if (!op.conflicts.empty()) {
      op.conflicts.erase(std::remove_if(op.conflicts.begin(), op.conflicts.end(),
                                        [&](TaskId t) { return !store.task_pending(op.src_object, t); }),
                         op.conflicts.end());
      if (!op.conflicts.empty()) return false;
    }
    if (store.pin_blocks_task(op.src_object, AccessMode::read)) return false;
    if (!store.initialized(op.src_object))
      fail(ErrorCode::uninitialized_read,
           "object " + std::to_string(op.src_object) +
               " was never written before its send drained");

    uint64_t size = op.hdr.payload_size;
    if (cfg_.direct_device) {
      // Read straight out of a valid copy, devices first; the wire payload
      // models a DMA from device memory.
      DeviceId src = landing_device_of(op.src_object);
      auto bytes = store.peek_copy(op.src_object, src);
      op.hdr.src_device_hint = uint8_t(rt_.devices().descriptor(src).kind);
      op.payload_frame.assign(bytes.begin(), bytes.end());
      op.frames_ready = true;
      return true;
    }
    if (!op.copy_started) {
      bool one_frame = cfg_.use_inline_messages && size <= kInlineCapacity;
      std::span<std::byte> dst;
      if (one_frame) {
        op.inline_frame.resize(kHeaderSize + size);
        dst = std::span<std::byte>(op.inline_frame).subspan(kHeaderSize);
      } else {
        op.payload_frame.resize(size);
        dst = op.payload_frame;
      }
      bool host_valid = false;
      for (const CopyInfo& c : store.copy_table(op.src_object)) {
        if (c.device_id == kHostDevice && c.state == CopyState::valid) host_valid = true;
        if (c.state == CopyState::valid && c.device_id != kHostDevice)
          op.hdr.src_device_hint = uint8_t(rt_.devices().descriptor(c.device_id).kind);
      }
      if (host_valid) op.hdr.src_device_hint = uint8_t(DeviceKind::host);
      if (cfg_.use_copy_to_inline) {
        op.copy = store.copy_to(op.src_object, dst);
      } else {
        op.bytes.resize(size);
        op.copy = store.copy_to(op.src_object, op.bytes);
      }
      if (!host_valid) {
        std::lock_guard<std::mutex> lk(mu_);
        stats_.staging_copies++;
      }
      op.copy_started = true;
      moved = true;
    }
    if (!op.copy.poll()) return moved;
    op.copy.wait();  // already terminal; surfaces a failed transfer
    if (!cfg_.use_copy_to_inline) {
      std::byte* dst = op.inline_frame.empty() ? op.payload_frame.data()
                                               : op.inline_frame.data() + kHeaderSize;
      std::memcpy(dst, op.bytes.data(), op.bytes.size());
      std::lock_guard<std::mutex> lk(mu_);
      stats_.host_extra_copies++;
    }
    op.frames_ready = true;
    moved = true;
  }
  emit_frames(op);
  return true;
}

void Communicator::emit_frames(SendOp& op) {
  uint64_t size = op.hdr.payload_size;
  uint64_t wire_bytes = 0;
  uint32_t frames = 0;
  if (size == 0 || !op.inline_frame.empty()) {
    op.hdr.inline_payload = true;
    if (op.inline_frame.empty()) op.inline_frame.resize(kHeaderSize);
    auto hdr = encode_header(op.hdr);
    std::memcpy(op.inline_frame.data(), hdr.data(), kHeaderSize);
    wire_bytes = op.inline_frame.size();
    frames = 1;
    transport_->send(op.target, std::move(op.inline_frame));
  } else {
    op.hdr.inline_payload = false;
    auto hdr = encode_header(op.hdr);
    std::vector<std::byte> head(hdr.begin(), hdr.end());
    wire_bytes = head.size() + op.payload_frame.size();
    frames = 2;
    transport_->send(op.target, std::move(head));
    transport_->send(op.target, std::move(op.payload_frame));
  }
  {
    std::lock_guard<std::mutex> lk(mu_);
    stats_.messages_sent++;
    stats_.frames_sent += frames;
    stats_.bytes_sent += wire_bytes;
    if (size > 0) {
      if (frames == 1) {
        stats_.inline_sends++;
      } else {
        stats_.two_frame_sends++;
      }
    }
  }
  if (op.hold) {
    rt_.objects().task_retired(op.src_object, op.hold);
    op.hold = 0;
  }
  if (op.served_get_callback)
    fire_callback(op.served_get_callback, op.served_get_requester, op.src_object,
                  PayloadKind::get_request);
  op.emitted = true;
  if (op.completes_at_emit) op.handle->done.store(true);
}

bool Communicator::pump_sends() {
  bool moved = false;
  std::vector<Rank> targets;
  {
    std::lock_guard<std::mutex> lk(mu_);
    for (auto& [r, q] : sendq_) {
      if (!q.empty()) targets.push_back(r);
    }
  }
  for (Rank r : targets) {
    for (;;) {
      SendOp* op = nullptr;
      {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = sendq_.find(r);
        if (it != sendq_.end() && !it->second.empty()) op = it->second.front().get();
      }
      if (!op) break;
      bool completed = false;
      try {
        moved |= advance_send(*op);
        completed = op->emitted;
      } catch (const Error& e) {
        if (op->hold) rt_.objects().task_retired(op->src_object, op->hold);
        op->handle->fail_with(e.code(), e.what());
        completed = true;
        moved = true;
      }
      if (!completed) break;
      std::lock_guard<std::mutex> lk(mu_);
      sendq_[r].pop_front();
    }
  }
  return moved;
}

// -------------------------------------------------------------- receive

bool Communicator::pump_receives() {
  bool moved = false;
  while (auto f = transport_->poll()) {
    moved = true;
    {
      std::lock_guard<std::mutex> lk(mu_);
      stats_.frames_received++;
    }
    auto partial = partial_.find(f->from);
    if (partial == partial_.end()) {
      WireHeader hdr = decode_header(f->bytes);
      if (hdr.source_rank != f->from)
        fail(ErrorCode::protocol_error, "header claims rank " + std::to_string(hdr.source_rank) +
                                            " but arrived from " + std::to_string(f->from));
      if (!hdr.inline_payload && hdr.payload_size > 0) {
        partial_[f->from] = hdr;
        continue;
      }
      if (f->bytes.size() != kHeaderSize + hdr.payload_size)
        fail(ErrorCode::protocol_error, "inline frame length does not match the header");
      Inbound msg;
      msg.from = f->from;
      msg.hdr = hdr;
      msg.frame = std::move(f->bytes);
      msg.payload_off = kHeaderSize;
      dispatch(std::move(msg));
    } else {
      Inbound msg;
      msg.from = f->from;
      msg.hdr = partial->second;
      partial_.erase(partial);
      if (f->bytes.size() != msg.hdr.payload_size)
        fail(ErrorCode::protocol_error, "payload frame length does not match the header");
      msg.frame = std::move(f->bytes);
      msg.payload_off = 0;
      dispatch(std::move(msg));
    }
  }
  return moved;
}

void Communicator::dispatch(Inbound&& msg) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stats_.messages_received++;
  }
  if (msg.hdr.target_kind == TargetKind::mobile_object) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = mobiles_.find(msg.hdr.target_id);
    if (it == mobiles_.end())
      fail(ErrorCode::protocol_error,
           "message for unknown mobile object " + std::to_string(msg.hdr.target_id));
    if (it->second != rank())
      fail(ErrorCode::protocol_error, "mobile object " + std::to_string(msg.hdr.target_id) +
                                          " is homed on rank " + std::to_string(it->second));
  }

  switch (msg.hdr.payload_kind) {
    case PayloadKind::raw_device:
      deliver_raw(msg);
      return;
    case PayloadKind::hetero_object:
      deliver_object(msg);
      return;
    case PayloadKind::put:
    case PayloadKind::get_request:
    case PayloadKind::get_reply:
      break;
    case PayloadKind::none:
      fail(ErrorCode::protocol_error, "unexpected NONE payload kind on the wire");
  }

  // Object-targeted operations: anything already parked for the same object
  // must stay ahead of us.
  ObjectId key = msg.hdr.target_id;
  if (msg.hdr.payload_kind == PayloadKind::get_reply) {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = pending_gets_.find(msg.hdr.completion_token);
    if (it == pending_gets_.end())
      fail(ErrorCode::protocol_error,
           "reply for unknown get token " + std::to_string(msg.hdr.completion_token));
    key = it->second->to_object ? it->second->dest : 0;
  }
  auto parked = deferred_.find(key);
  if (key != 0 && parked != deferred_.end() && !parked->second.empty()) {
    parked->second.push_back(std::make_unique<Inbound>(std::move(msg)));
    std::lock_guard<std::mutex> lk(mu_);
    stats_.deferred_deliveries++;
    return;
  }
  if (!try_deliver(msg)) {
    deferred_[key].push_back(std::make_unique<Inbound>(std::move(msg)));
    std::lock_guard<std::mutex> lk(mu_);
    stats_.deferred_deliveries++;
  }
}

bool Communicator::try_deliver(Inbound& msg) {
  switch (msg.hdr.payload_kind) {
    case PayloadKind::put:
      return apply_put(msg);
    case PayloadKind::get_request:
      return serve_get(msg);
    case PayloadKind::get_reply:
      return land_get_reply(msg);
    default:
      fail(ErrorCode::protocol_error, "undeliverable payload kind");
  }
}

bool Communicator::pump_deferred() {
  bool moved = false;
  for (auto it = deferred_.begin(); it != deferred_.end();) {
    auto& q = it->second;
    while (!q.empty() && try_deliver(*q.front())) {
      q.pop_front();
      moved = true;
    }
    it = q.empty() ? deferred_.erase(it) : std::next(it);
  }
  return moved;
}

void Communicator::deliver_raw(Inbound& msg) {
  auto& mgr = rt_.devices();
  DeviceId dst = DeviceId(msg.hdr.dst_device_hint);
  if (dst >= mgr.device_count())
    fail(ErrorCode::unsupported_device,
         "dst_device " + std::to_string(dst) + " absent on this rank");
  uint64_t size = msg.hdr.payload_size;

  HandlerContext ctx{*this};
  ctx.source = msg.from;
  ctx.kind = PayloadKind::raw_device;
  if (msg.hdr.target_kind == TargetKind::mobile_object) ctx.mobile_id = msg.hdr.target_id;
  ctx.buffer_device = dst;
  ctx.size = size;

  DeviceAllocation alloc;
  if (size > 0) {
    alloc = cache_->acquire(dst, size);
    auto payload = msg.payload();
    if (!cfg_.direct_device && dst != kHostDevice) {
      EventId ev = mgr.enqueue_copy(MemRef::host(payload.data()), MemRef::device(alloc), size,
                                    dst, mgr.h2d_queue(dst));
      mgr.wait_event(ev);
      std::lock_guard<std::mutex> lk(mu_);
      stats_.staging_copies++;
    } else {
      auto span = mgr.span_of(alloc, 0, size);
      std::memcpy(span.data(), payload.data(), size);
    }
    ctx.buffer = alloc;
  }
  run_handler(msg.hdr.handler_id, ctx);
  if (size > 0) {
    if (mgr.inflight_ops(alloc) > 0)
      fail(ErrorCode::invalid_state,
           "handler returned with device operations in flight on the received buffer");
    cache_->release(alloc);
  }
}

void Communicator::deliver_object(Inbound& msg) {
  auto& store = rt_.objects();
  uint64_t size = msg.hdr.object_size;
  if (msg.hdr.payload_size != size)
    fail(ErrorCode::protocol_error, "object payload does not match the declared object size");
  ObjectId obj = cfg_.use_object_pool ? store.create_received(size) : store.create(size);
  DeviceId landing = choose_landing_device(msg.hdr.dst_device_hint);
  land_payload_into_object(obj, landing, msg.payload());
  {
    std::lock_guard<std::mutex> lk(mu_);
    stats_.objects_received++;
  }
  HandlerContext ctx{*this};
  ctx.source = msg.from;
  ctx.kind = PayloadKind::hetero_object;
  if (msg.hdr.target_kind == TargetKind::mobile_object) ctx.mobile_id = msg.hdr.target_id;
  ctx.object = obj;
  ctx.size = size;
  run_handler(msg.hdr.handler_id, ctx);
}

bool Communicator::apply_put(Inbound& msg) {
  auto& store = rt_.objects();
  ObjectId target = msg.hdr.target_id;
  if (!store.alive(target))
    fail(ErrorCode::protocol_error, "put to dead object " + std::to_string(target));
  if (store.size_of(target) != msg.hdr.payload_size)
    fail(ErrorCode::protocol_error, "put payload does not match the target object size");
  if (store.pin_blocks_task(target, AccessMode::write)) return false;
  TaskId hold = next_hold_id();
  auto conflicts = store.register_task(target, hold, AccessMode::write);
  if (!conflicts.empty()) {
    store.task_retired(target, hold);
    return false;
  }
  land_payload_into_object(target, landing_device_of(target), msg.payload());
  store.task_retired(target, hold);
  {
    std::lock_guard<std::mutex> lk(mu_);
    stats_.puts_applied++;
  }
  if (msg.hdr.handler_id)
    fire_callback(msg.hdr.handler_id, msg.from, target, PayloadKind::put);
  return true;
}

bool Communicator::serve_get(Inbound& msg) {
  auto& store = rt_.objects();
  ObjectId target = msg.hdr.target_id;
  if (!store.alive(target))
    fail(ErrorCode::protocol_error, "get from dead object " + std::to_string(target));
  if (store.size_of(target) != msg.hdr.object_size)
    fail(ErrorCode::protocol_error, "get size does not match the target object");
  if (store.pin_blocks_task(target, AccessMode::read)) return false;
  TaskId hold = next_hold_id();
  auto conflicts = store.register_task(target, hold, AccessMode::read);
  if (!conflicts.empty()) {
    store.task_retired(target, hold);
    return false;
  }
  auto op = std::make_unique<SendOp>();
  op->handle = std::make_shared<CommHandle::State>();  // owner-side, nobody waits on it
  op->target = msg.from;
  op->src_object = target;
  op->hold = hold;
  op->hdr.payload_kind = PayloadKind::get_reply;
  op->hdr.handler_id = 0;
  op->hdr.source_rank = rank();
  op->hdr.target_kind = TargetKind::rank;
  op->hdr.target_id = msg.from;
  op->hdr.payload_size = msg.hdr.object_size;
  op->hdr.object_size = msg.hdr.object_size;
  op->hdr.src_device_hint = kNoDeviceHint;
  op->hdr.dst_device_hint = kNoDeviceHint;
  op->hdr.completion_token = msg.hdr.completion_token;
  op->served_get_callback = msg.hdr.handler_id;
  op->served_get_requester = msg.from;
  {
    std::lock_guard<std::mutex> lk(mu_);
    stats_.gets_served++;
    sendq_[msg.from].push_back(std::move(op));
  }
  return true;
}

bool Communicator::land_get_reply(Inbound& msg) {
  PendingGet* pg = nullptr;
  {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = pending_gets_.find(msg.hdr.completion_token);
    if (it == pending_gets_.end())
      fail(ErrorCode::protocol_error,
           "reply for unknown get token " + std::to_string(msg.hdr.completion_token));
    pg = it->second.get();
  }
  auto& store = rt_.objects();
  if (pg->to_object) {
    if (!store.alive(pg->dest)) {
      pg->handle->fail_with(ErrorCode::destroyed, "get destination object destroyed");
    } else {
      if (store.pin_blocks_task(pg->dest, AccessMode::write)) return false;
      TaskId hold = next_hold_id();
      auto conflicts = store.register_task(pg->dest, hold, AccessMode::write);
      if (!conflicts.empty()) {
        store.task_retired(pg->dest, hold);
        return false;
      }
      land_payload_into_object(pg->dest, landing_device_of(pg->dest), msg.payload());
      store.task_retired(pg->dest, hold);
      pg->handle->done.store(true);
    }
  } else {
    auto payload = msg.payload();
    std::memcpy(pg->region.data(), payload.data(), payload.size());
    pg->handle->done.store(true);
  }
  std::lock_guard<std::mutex> lk(mu_);
  pending_gets_.erase(msg.hdr.completion_token);
  return true;
}

// ------------------------------------------------------------- landing

DeviceId Communicator::choose_landing_device(uint8_t kind_hint) const {
  auto& mgr = rt_.devices();
  std::vector<DeviceId> candidates;
  if (kind_hint != kNoDeviceHint) {
    if (kind_hint > uint8_t(DeviceKind::gpu_sim))
      fail(ErrorCode::protocol_error, "bad device kind hint " + std::to_string(kind_hint));
    candidates = mgr.devices_of_kind(DeviceKind(kind_hint));
  }
  if (candidates.empty()) {
    for (DeviceId d = 1; d < mgr.device_count(); d++) candidates.push_back(d);
  }
  if (candidates.empty()) return kHostDevice;
  DeviceId best = candidates.front();
  for (DeviceId d : candidates) {
    if (mgr.live_allocation_bytes(d) < mgr.live_allocation_bytes(best)) best = d;
  }
  return best;
}

DeviceId Communicator::landing_device_of(ObjectId obj) const {
  DeviceId device = kHostDevice;
  for (const CopyInfo& c : rt_.objects().copy_table(obj)) {
    if (c.state == CopyState::valid && c.device_id != kHostDevice) {
      device = c.device_id;
      break;
    }
  }
  return device;
}

void Communicator::land_payload_into_object(ObjectId obj, DeviceId landing,
                                            std::span<const std::byte> payload) {
  auto& store = rt_.objects();
  auto& mgr = rt_.devices();
  if (!cfg_.direct_device) {
    DeviceAllocation host = store.ensure_copy_allocated(obj, kHostDevice);
    auto hspan = mgr.span_of(host, 0, payload.size());
    std::memcpy(hspan.data(), payload.data(), payload.size());
    if (landing != kHostDevice) {
      DeviceAllocation dev = store.ensure_copy_allocated(obj, landing);
      EventId ev = mgr.enqueue_copy(MemRef::device(host), MemRef::device(dev), payload.size(),
                                    landing, mgr.h2d_queue(landing));
      mgr.wait_event(ev);
      {
        std::lock_guard<std::mutex> lk(mu_);
        stats_.staging_copies++;
      }
      store.apply_write_invalidate(obj, landing);
    } else {
      store.apply_write_invalidate(obj, kHostDevice);
    }
  } else {
    DeviceAllocation dev = store.ensure_copy_allocated(obj, landing);
    auto span = mgr.span_of(dev, 0, payload.size());
    std::memcpy(span.data(), payload.data(), payload.size());
    store.apply_write_invalidate(obj, landing);
  }
}

// ------------------------------------------------------------- handlers

void Communicator::run_handler(uint32_t handler, HandlerContext& ctx) {
  Handler fn;
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (handler == 0 || handler > handlers_.size())
      fail(ErrorCode::unknown_handler,
           "handler " + std::to_string(handler) + " is not registered");
    fn = handlers_[handler - 1];
    stats_.handlers_invoked++;
  }
  fn(ctx);
}

void Communicator::fire_callback(uint32_t handler, Rank source, ObjectId object,
                                 PayloadKind kind) {
  HandlerContext ctx{*this};
  ctx.source = source;
  ctx.kind = kind;
  ctx.object = object;
  run_handler(handler, ctx);
  std::lock_guard<std::mutex> lk(mu_);
  stats_.callbacks_fired++;
}

// ------------------------------------------------------------- progress

bool Communicator::progress() {
  if (tl_pumping == this) return false;
  bool expected = false;
  if (!pumping_.compare_exchange_strong(expected, true)) return false;
  PumpGuard guard{tl_pumping, pumping_};
  tl_pumping = this;
  bool moved = false;
  moved |= pump_sends();
  moved |= pump_receives();
  moved |= pump_deferred();
  moved |= pump_sends();  // replies enqueued by deliveries leave in the same pass
  return moved;
}

void Communicator::flush() {
  if (tl_pumping == this)
    fail(ErrorCode::reentrant_call, "cannot flush the communicator inside a handler");
  uint64_t idle = 0;
  for (;;) {
    bool moved = progress();
    moved |= rt_.pump();
    bool empty;
    {
      std::lock_guard<std::mutex> lk(mu_);
      empty = std::all_of(sendq_.begin(), sendq_.end(),
                          [](const auto& kv) { return kv.second.empty(); });
    }
    if (empty) return;
    if (moved) {
      idle = 0;
    } else if (++idle > (1ull << 24)) {
      fail(ErrorCode::invalid_state, "flush stalled: queued sends cannot complete");
    } else {
      std::this_thread::yield();
    }
  }
}

CommStats Communicator::stats() const {
  std::lock_guard<std::mutex> lk(mu_);
  CommStats out = stats_;
  out.receive_cache_hits = cache_->hits;
  out.receive_cache_misses = cache_->misses;
  return out;
}

}  // namespace amph
