#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amph/runtime.hpp"
#include "amph/transport.hpp"
#include "amph/wire.hpp"

namespace amph {

class Communicator;

/// Addresses one rank's hetero_object from anywhere. `size` is recorded when
/// the ref is minted so put/get size mismatches abort before any transfer.
struct GlobalObjectRef {
  Rank owner = 0;
  ObjectId object = 0;
  uint64_t size = 0;
};

/// Location-independent handler target. Every rank resolves the id to the
/// same home rank; handlers aimed at it run there.
struct MobileObjectRef {
  uint64_t id = 0;
};

/// What a handler sees when a message is delivered to it. Raw payload
/// buffers are reclaimed when the handler returns; delivered hetero_objects
/// belong to the receiving application afterwards.
struct HandlerContext {
  Communicator& comm;
  Rank source = 0;
  PayloadKind kind = PayloadKind::none;
  uint64_t mobile_id = 0;       ///< nonzero when the message targeted a mobile object
  ObjectId object = 0;          ///< delivered or affected hetero_object, 0 if none
  DeviceId buffer_device = -1;  ///< residence of a raw payload
  DeviceAllocation buffer = {};  ///< raw payload allocation, dropped at handler return
  uint64_t size = 0;            ///< payload byte count
};

using Handler = std::function<void(HandlerContext&)>;

/// Sender-side completion future. For object sends, done means the source
/// object may be written again; for get, done means the destination holds
/// the fetched bytes.
class CommHandle {
 public:
  CommHandle() = default;

  bool valid() const { return st_ != nullptr; }
  bool done() const;
  bool failed() const;
  std::string diagnostic() const;
  /// Pumps communicator and runtime progress until done; throws on failure.
  /// Must not be called from inside a handler.
  void wait();

 private:
  friend class Communicator;
  struct State;
  CommHandle(Communicator* comm, std::shared_ptr<State> st) : comm_(comm), st_(std::move(st)) {}
  Communicator* comm_ = nullptr;
  std::shared_ptr<State> st_;
};

struct CommStats {
  uint64_t messages_sent = 0;      // logical operations handed to the wire
  uint64_t messages_received = 0;  // logical operations delivered
  uint64_t frames_sent = 0;        // wire messages
  uint64_t frames_received = 0;
  uint64_t bytes_sent = 0;  // frame bytes including headers
  uint64_t inline_sends = 0;
  uint64_t two_frame_sends = 0;
  uint64_t staging_copies = 0;     // payload crossings of a device/host boundary
  uint64_t host_extra_copies = 0;  // intermediate host buffer hops (copy-to-frame disabled)
  uint64_t handlers_invoked = 0;
  uint64_t puts_applied = 0;
  uint64_t gets_served = 0;
  uint64_t callbacks_fired = 0;
  uint64_t objects_received = 0;
  uint64_t receive_cache_hits = 0;
  uint64_t receive_cache_misses = 0;
  uint64_t deferred_deliveries = 0;  // messages parked behind busy target objects
};

/// One rank's view of the distributed substrate: registers handlers, sends
/// one-sided messages carrying raw device buffers or hetero_objects, and
/// serves put/get on global object references. Receiving is fully driven by
/// progress(); application code never posts receives.
///
/// Registration calls (register_handler, create_mobile) are collective:
/// every rank must make them in the same order so ids agree.
class Communicator {
 public:
  Communicator(Runtime& rt, std::unique_ptr<Transport> transport, CommConfig cfg = {});
  ~Communicator();

  Communicator(const Communicator&) = delete;
  Communicator& operator=(const Communicator&) = delete;

  Rank rank() const { return transport_->rank(); }
  Rank rank_count() const { return transport_->rank_count(); }
  const CommConfig& config() const { return cfg_; }
  Runtime& runtime() { return rt_; }

  uint32_t register_handler(Handler fn);
  MobileObjectRef create_mobile(Rank home);
  Rank mobile_home(MobileObjectRef m) const;

  /// Ships `size` bytes of a raw allocation to `handler` on `target`. The
  /// payload lands on `dst_device` (an id on the target rank) before the
  /// handler runs and is reclaimed when it returns. The source bytes are
  /// captured before this returns, so the caller may reuse the buffer.
  CommHandle invoke_remote_raw(Rank target, uint32_t handler, const DeviceAllocation& buffer,
                               uint64_t size, DeviceId src_device, DeviceId dst_device);

  /// Ships a hetero_object; a fresh object materializes on the target and is
  /// passed to the handler, which owns it from then on. The source object is
  /// held against writers until the send completes. `dst_kind` hints where
  /// the receiver should land the bytes; unset lets it pick the least-loaded
  /// accelerator.
  CommHandle invoke_remote_object(Rank target, uint32_t handler, ObjectId obj,
                                  std::optional<DeviceKind> dst_kind = std::nullopt);
  CommHandle invoke_remote_object(MobileObjectRef target, uint32_t handler, ObjectId obj,
                                  std::optional<DeviceKind> dst_kind = std::nullopt);

  GlobalObjectRef global_ref(ObjectId obj) const;

  /// Replaces the referenced object's bytes. `callback` (0 for none) runs on
  /// the owner rank once the bytes have landed.
  CommHandle put(const GlobalObjectRef& ref, ObjectId source, uint32_t callback = 0);
  CommHandle put(const GlobalObjectRef& ref, std::span<const std::byte> bytes,
                 uint32_t callback = 0);

  /// Fetches the referenced object's current bytes into a local object or
  /// host region (which must outlive the handle). `callback` runs on the
  /// owner rank when the reply has been issued.
  CommHandle get(const GlobalObjectRef& ref, ObjectId destination, uint32_t callback = 0);
  CommHandle get(const GlobalObjectRef& ref, std::span<std::byte> destination,
                 uint32_t callback = 0);

  /// One substrate pass: advances queued sends, delivers inbound frames,
  /// retries deferred deliveries. Returns whether anything moved. No-op when
  /// called from inside a handler on the same thread.
  bool progress();
  /// Progress (communicator plus runtime) until all queued sends are out.
  void flush();

  CommStats stats() const;

 private:
  struct SendOp;
  struct PendingGet;
  struct Inbound;
  struct ReceiveCache;

  uint32_t validate_handler(uint32_t handler) const;
  CommHandle enqueue_object_send(Rank target, WireHeader hdr, ObjectId obj);
  CommHandle get_common(const GlobalObjectRef& ref, std::unique_ptr<PendingGet> pg,
                        uint32_t callback);
  bool advance_send(SendOp& op);
  void emit_frames(SendOp& op);
  bool pump_sends();
  bool pump_receives();
  bool pump_deferred();
  void dispatch(Inbound&& msg);
  bool try_deliver(Inbound& msg);
  void deliver_raw(Inbound& msg);
  void deliver_object(Inbound& msg);
  bool apply_put(Inbound& msg);
  bool serve_get(Inbound& msg);
  bool land_get_reply(Inbound& msg);
  void run_handler(uint32_t handler, HandlerContext& ctx);
  void fire_callback(uint32_t handler, Rank source, ObjectId object, PayloadKind kind);
  DeviceId choose_landing_device(uint8_t kind_hint) const;
  DeviceId landing_device_of(ObjectId obj) const;
  void land_payload_into_object(ObjectId obj, DeviceId landing, std::span<const std::byte> payload);
  TaskId next_hold_id();

  Runtime& rt_;
  std::unique_ptr<Transport> transport_;
  CommConfig cfg_;

  mutable std::mutex mu_;  // guards handlers_, mobiles_, send queues, stats
  std::vector<Handler> handlers_;
  std::map<uint64_t, Rank> mobiles_;
  uint64_t next_mobile_ = 1;
  uint64_t next_token_ = 1;
  uint64_t next_hold_ = 1;

  std::map<Rank, std::deque<std::unique_ptr<SendOp>>> sendq_;
  std::map<uint64_t, std::unique_ptr<PendingGet>> pending_gets_;  // by completion token
  std::map<Rank, WireHeader> partial_;  // header frame seen, payload frame pending
  std::map<ObjectId, std::deque<std::unique_ptr<Inbound>>> deferred_;
  std::unique_ptr<ReceiveCache> cache_;
  std::atomic<bool> pumping_{false};
  CommStats stats_;
};

}  // namespace amph
