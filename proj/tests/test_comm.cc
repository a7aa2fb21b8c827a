#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>

#include "amph/comm.hpp"

using namespace amph;

namespace {

/// In-process cluster: one runtime and communicator per rank over a shared
/// loopback fabric, pumped cooperatively from the test thread.
struct Cluster {
  LoopbackFabric fabric;
  std::vector<std::unique_ptr<Runtime>> rts;
  std::vector<std::unique_ptr<Communicator>> comms;

  explicit Cluster(Rank ranks, CommConfig ccfg = {}, uint64_t fabric_seed = 0, int gpus = 1)
      : fabric(ranks, fabric_seed) {
    RuntimeConfig rcfg;
    rcfg.deterministic = true;
    for (Rank r = 0; r < ranks; r++) {
      rts.push_back(std::make_unique<Runtime>(rcfg, Runtime::simple_topology(gpus)));
      comms.push_back(std::make_unique<Communicator>(*rts[r], fabric.endpoint(r), ccfg));
    }
  }

  Communicator& comm(Rank r) { return *comms[r]; }
  Runtime& rt(Rank r) { return *rts[r]; }

  bool pump_all() {
    bool moved = false;
    for (auto& c : comms) moved |= c->progress();
    for (auto& r : rts) moved |= r->pump();
    return moved;
  }

  template <typename Pred>
  void run_until(Pred done) {
    int idle = 0;
    while (!done()) {
      if (pump_all()) {
        idle = 0;
      } else {
        REQUIRE(++idle < 100000);
      }
    }
  }

  void settle() {
    while (pump_all()) {
    }
  }
};

std::vector<std::byte> pattern(size_t n, uint32_t seed) {
  std::vector<std::byte> v(n);
  std::mt19937 rng(seed);
  for (auto& b : v) b = std::byte(rng() & 0xff);
  return v;
}

/// Creates an object on `rt` whose only VALID copy sits on device 1, so a
/// send out of it must cross the device boundary.
ObjectId device_resident_object(Runtime& rt, std::span<const std::byte> bytes) {
  ObjectId id = rt.objects().create(bytes.size(), bytes);
  auto ticket = rt.objects().ensure_resident(id, 1, AccessMode::read);
  while (!ticket->done() && !ticket->failed()) rt.pump();
  REQUIRE(ticket->done());
  rt.objects().apply_write_invalidate(id, 1);
  return id;
}

std::vector<std::byte> read_object(Runtime& rt, ObjectId id) {
  auto acc = rt.objects().acquire_host(id, AccessMode::read);
  auto& view = acc.wait();
  std::vector<std::byte> out(view.bytes.begin(), view.bytes.end());
  acc.release();
  return out;
}

}  // namespace

TEST_CASE("raw message round-trips between two ranks") {
  Cluster cl(2);
  std::vector<std::byte> got;
  Rank got_from = 99;
  uint32_t ping = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      auto span = ctx.comm.runtime().devices().span_of(ctx.buffer, 0, ctx.size);
      got.assign(span.begin(), span.end());
      got_from = ctx.source;
    });
    if (r == 1) ping = id;
  }

  auto bytes = pattern(8, 7);
  auto& mgr0 = cl.rt(0).devices();
  auto buf = mgr0.alloc_raw(kHostDevice, 8);
  REQUIRE(buf.has_value());
  std::memcpy(mgr0.span_of(*buf, 0, 8).data(), bytes.data(), 8);

  auto h = cl.comm(0).invoke_remote_raw(1, ping, *buf, 8, kHostDevice, 1);
  cl.run_until([&] { return h.done() && !got.empty(); });
  CHECK(got == bytes);
  CHECK(got_from == 0);
  CHECK(cl.comm(1).stats().handlers_invoked == 1);
  mgr0.free_raw(*buf);
}

TEST_CASE("zero-size payload is a single header-only frame") {
  Cluster cl(2);
  int pokes = 0;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      CHECK(ctx.size == 0);
      CHECK_FALSE(ctx.buffer.valid());
      pokes++;
    });
    if (r == 1) hid = id;
  }
  auto h = cl.comm(0).invoke_remote_raw(1, hid, {}, 0, kHostDevice, kHostDevice);
  cl.run_until([&] { return pokes == 1; });
  CHECK(h.done());
  CHECK(cl.comm(0).stats().frames_sent == 1);
  CHECK(cl.comm(0).stats().inline_sends == 0);
  CHECK(cl.comm(0).stats().two_frame_sends == 0);
}

TEST_CASE("receive cache recycles buffers across raw deliveries") {
  Cluster cl(2);
  int seen = 0;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext&) { seen++; });
    if (r == 1) hid = id;
  }
  auto& mgr0 = cl.rt(0).devices();
  auto buf = mgr0.alloc_raw(kHostDevice, 4096);
  for (int i = 0; i < 100; i++) {
    cl.comm(0).invoke_remote_raw(1, hid, *buf, 4096, kHostDevice, 1);
    cl.run_until([&] { return seen == i + 1; });
  }
  auto st = cl.comm(1).stats();
  CHECK(st.receive_cache_misses == 1);
  CHECK(st.receive_cache_hits == 99);
  mgr0.free_raw(*buf);

  SUBCASE("disabled cache allocates every time") {
    CommConfig ccfg;
    ccfg.use_receive_cache = false;
    Cluster raw_cl(2, ccfg);
    int n = 0;
    uint32_t h2 = 0;
    for (Rank r = 0; r < 2; r++) {
      uint32_t id = raw_cl.comm(r).register_handler([&](HandlerContext&) { n++; });
      if (r == 1) h2 = id;
    }
    auto b = raw_cl.rt(0).devices().alloc_raw(kHostDevice, 4096);
    for (int i = 0; i < 10; i++) {
      raw_cl.comm(0).invoke_remote_raw(1, h2, *b, 4096, kHostDevice, 1);
      raw_cl.run_until([&] { return n == i + 1; });
    }
    CHECK(raw_cl.comm(1).stats().receive_cache_hits == 0);
    CHECK(raw_cl.comm(1).stats().receive_cache_misses == 10);
  }
}

TEST_CASE("object send materializes a matching object at the target") {
  Cluster cl(2);
  uint64_t sender_sum = 0;
  uint64_t receiver_sum = 1;
  ObjectId delivered = 0;
  std::vector<CopyInfo> at_delivery;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      delivered = ctx.object;
      at_delivery = ctx.comm.runtime().objects().copy_table(ctx.object);
      auto bytes = read_object(ctx.comm.runtime(), ctx.object);
      receiver_sum = std::accumulate(bytes.begin(), bytes.end(), uint64_t(0),
                                     [](uint64_t a, std::byte b) { return a + uint64_t(b); });
    });
    if (r == 1) hid = id;
  }
  auto bytes = pattern(256, 11);
  sender_sum = std::accumulate(bytes.begin(), bytes.end(), uint64_t(0),
                               [](uint64_t a, std::byte b) { return a + uint64_t(b); });
  ObjectId obj = cl.rt(0).objects().create(256, bytes);
  auto h = cl.comm(0).invoke_remote_object(1, hid, obj);
  cl.run_until([&] { return h.done() && delivered != 0; });
  CHECK(receiver_sum == sender_sum);
  CHECK(cl.rt(1).objects().size_of(delivered) == 256);
  // The landing is a write: exactly one VALID copy at delivery, on an
  // accelerator (the handler's host read replicates it afterwards).
  int valid = 0;
  for (auto& c : at_delivery) {
    if (c.state == CopyState::valid) {
      valid++;
      CHECK(c.device_id == 1);
    }
  }
  CHECK(valid == 1);
}

TEST_CASE("inline threshold: 448 bytes is one frame, 449 is two") {
  Cluster cl(2);
  int seen = 0;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext&) { seen++; });
    if (r == 1) hid = id;
  }

  ObjectId small = cl.rt(0).objects().create(448, pattern(448, 1));
  auto h1 = cl.comm(0).invoke_remote_object(1, hid, small);
  cl.run_until([&] { return seen == 1; });
  auto after_small = cl.comm(0).stats();
  CHECK(after_small.frames_sent == 1);
  CHECK(after_small.inline_sends == 1);
  CHECK(after_small.two_frame_sends == 0);

  ObjectId big = cl.rt(0).objects().create(449, pattern(449, 2));
  auto h2 = cl.comm(0).invoke_remote_object(1, hid, big);
  cl.run_until([&] { return seen == 2; });
  auto after_big = cl.comm(0).stats();
  CHECK(after_big.frames_sent == 3);
  CHECK(after_big.inline_sends == 1);
  CHECK(after_big.two_frame_sends == 1);

  SUBCASE("inline disabled sends every payload as two frames") {
    CommConfig ccfg;
    ccfg.use_inline_messages = false;
    Cluster cl2(2, ccfg);
    int n = 0;
    uint32_t h = 0;
    for (Rank r = 0; r < 2; r++) {
      uint32_t id = cl2.comm(r).register_handler([&](HandlerContext&) { n++; });
      if (r == 1) h = id;
    }
    ObjectId obj = cl2.rt(0).objects().create(64, pattern(64, 3));
    cl2.comm(0).invoke_remote_object(1, h, obj);
    cl2.run_until([&] { return n == 1; });
    CHECK(cl2.comm(0).stats().frames_sent == 2);
    CHECK(cl2.comm(0).stats().two_frame_sends == 1);
  }
}

TEST_CASE("staging protocol crosses the device boundary exactly twice") {
  auto staging_copies = [](Cluster& cl, uint64_t size) {
    int seen = 0;
    ObjectId landed = 0;
    uint32_t hid = 0;
    for (Rank r = 0; r < 2; r++) {
      uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
        landed = ctx.object;
        seen++;
      });
      if (r == 1) hid = id;
    }
    auto before0 = cl.comm(0).stats().staging_copies;
    auto before1 = cl.comm(1).stats().staging_copies;
    ObjectId obj = device_resident_object(cl.rt(0), pattern(size, 17));
    cl.comm(0).invoke_remote_object(1, hid, obj);
    cl.run_until([&] { return seen == 1; });
    REQUIRE(read_object(cl.rt(1), landed) == pattern(size, 17));
    return (cl.comm(0).stats().staging_copies - before0) +
           (cl.comm(1).stats().staging_copies - before1);
  };

  SUBCASE("host staging") {
    for (uint64_t size : {8ull, 1024ull, 512ull * 1024}) {
      Cluster cl(2);
      CHECK(staging_copies(cl, size) == 2);
    }
  }
  SUBCASE("direct to device") {
    CommConfig ccfg;
    ccfg.direct_device = true;
    for (uint64_t size : {8ull, 1024ull, 512ull * 1024}) {
      Cluster cl(2, ccfg);
      CHECK(staging_copies(cl, size) == 0);
    }
  }
}

TEST_CASE("a queued send holds the source object against writers") {
  Cluster cl(2);
  std::vector<std::byte> got;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      got = read_object(ctx.comm.runtime(), ctx.object);
    });
    if (r == 1) hid = id;
  }
  auto before = pattern(512, 5);
  ObjectId obj = cl.rt(0).objects().create(512, before);

  auto& eng = cl.rt(0).engine();
  cl.rt(0).kernels().register_uniform("scrub", [](KernelContext& k) {
    for (auto& b : k.arg(0)) b = std::byte(0);
  });

  auto h = cl.comm(0).invoke_remote_object(1, hid, obj);
  // The writer task must wait for the in-flight send, not corrupt it.
  TaskId t = eng.create_task("scrub", {{obj, AccessMode::readwrite}}, DeviceKind::gpu_sim);
  eng.submit(t);
  cl.run_until([&] { return h.done() && !got.empty() && eng.test_complete(t); });
  CHECK(got == before);
  CHECK(read_object(cl.rt(0), obj) == std::vector<std::byte>(512, std::byte(0)));
}

TEST_CASE("mobile object refs route to their home rank") {
  Cluster cl(3);
  std::vector<uint32_t> handler(3);
  std::vector<uint64_t> hits(3, 0);
  uint64_t seen_mobile = 0;
  std::vector<MobileObjectRef> mobiles;
  for (Rank r = 0; r < 3; r++) {
    handler[r] = cl.comm(r).register_handler([&, r](HandlerContext& ctx) {
      hits[r]++;
      seen_mobile = ctx.mobile_id;
    });
  }
  // Collective creation: same order on every rank.
  for (Rank r = 0; r < 3; r++) {
    MobileObjectRef m;
    for (Rank caller = 0; caller < 3; caller++) m = cl.comm(caller).create_mobile(2 - r);
    mobiles.push_back(m);
  }
  CHECK(cl.comm(0).mobile_home(mobiles[0]) == 2);

  ObjectId obj = cl.rt(1).objects().create(64, pattern(64, 9));
  cl.comm(1).invoke_remote_object(mobiles[0], handler[1], obj);
  cl.run_until([&] { return hits[2] == 1; });
  CHECK(hits[0] == 0);
  CHECK(hits[1] == 0);
  CHECK(seen_mobile == mobiles[0].id);

  CHECK_THROWS_AS(cl.comm(0).invoke_remote_object(MobileObjectRef{999}, handler[0], obj), Error);
}

TEST_CASE("put and get round-trip through a global ref") {
  Cluster cl(2);
  int put_cbs = 0;
  int get_cbs = 0;
  uint32_t put_cb = 0;
  uint32_t get_cb = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t p = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      CHECK(ctx.kind == PayloadKind::put);
      put_cbs++;
    });
    uint32_t g = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      CHECK(ctx.kind == PayloadKind::get_request);
      get_cbs++;
    });
    if (r == 0) {
      put_cb = p;
      get_cb = g;
    }
  }

  ObjectId target = cl.rt(0).objects().create(1024, pattern(1024, 1));
  GlobalObjectRef ref = cl.comm(0).global_ref(target);
  CHECK(ref.owner == 0);
  CHECK(ref.size == 1024);

  auto payload = pattern(1024, 77);
  auto hp = cl.comm(1).put(ref, std::span<const std::byte>(payload), put_cb);
  cl.run_until([&] { return hp.done() && put_cbs == 1; });
  CHECK(read_object(cl.rt(0), target) == payload);

  std::vector<std::byte> fetched(1024);
  auto hg = cl.comm(1).get(ref, std::span<std::byte>(fetched), get_cb);
  cl.run_until([&] { return hg.done(); });
  CHECK(fetched == payload);
  CHECK(get_cbs == 1);
  CHECK(put_cbs == 1);
  CHECK(cl.comm(0).stats().puts_applied == 1);
  CHECK(cl.comm(0).stats().gets_served == 1);
  CHECK(cl.comm(0).stats().callbacks_fired == 2);

  SUBCASE("object-sourced put and object-destination get") {
    auto src_bytes = pattern(1024, 33);
    ObjectId src = device_resident_object(cl.rt(1), src_bytes);
    auto h1 = cl.comm(1).put(ref, src);
    cl.run_until([&] { return h1.done(); });
    cl.settle();
    CHECK(read_object(cl.rt(0), target) == src_bytes);

    ObjectId dst = cl.rt(1).objects().create(1024);
    auto h2 = cl.comm(1).get(ref, dst);
    cl.run_until([&] { return h2.done(); });
    CHECK(read_object(cl.rt(1), dst) == src_bytes);
  }

  SUBCASE("size mismatches abort before any transfer") {
    auto frames_before = cl.comm(1).stats().frames_sent;
    std::vector<std::byte> wrong(1023);
    CHECK_THROWS_AS(cl.comm(1).put(ref, std::span<const std::byte>(wrong)), Error);
    ObjectId small = cl.rt(1).objects().create(8, pattern(8, 1));
    CHECK_THROWS_AS(cl.comm(1).put(ref, small), Error);
    CHECK_THROWS_AS(cl.comm(1).get(ref, std::span<std::byte>(wrong)), Error);
    CHECK_THROWS_AS(cl.comm(1).get(ref, small), Error);
    CHECK(cl.comm(1).stats().frames_sent == frames_before);
  }

  SUBCASE("put to the local rank still fires the callback") {
    auto bytes = pattern(1024, 55);
    auto h = cl.comm(0).put(ref, std::span<const std::byte>(bytes), put_cb);
    cl.run_until([&] { return h.done() && put_cbs == 2; });
    CHECK(read_object(cl.rt(0), target) == bytes);
  }
}

TEST_CASE("messages to one target apply in send order under reordering") {
  for (uint64_t seed : {3ull, 17ull, 2026ull}) {
    Cluster cl(3, {}, seed);
    std::map<Rank, std::vector<uint32_t>> seqs;
    uint32_t hid = 0;
    for (Rank r = 0; r < 3; r++) {
      uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
        auto span = ctx.comm.runtime().devices().span_of(ctx.buffer, 0, 4);
        uint32_t seq;
        std::memcpy(&seq, span.data(), 4);
        seqs[ctx.source].push_back(seq);
      });
      if (r == 0) hid = id;
    }
    const int kEach = 40;
    for (Rank from : {1u, 2u}) {
      auto& mgr = cl.rt(from).devices();
      auto buf = mgr.alloc_raw(kHostDevice, 4);
      for (uint32_t i = 0; i < kEach; i++) {
        std::memcpy(mgr.span_of(*buf, 0, 4).data(), &i, 4);
        cl.comm(from).invoke_remote_raw(0, hid, *buf, 4, kHostDevice, kHostDevice);
        cl.comm(from).flush();
      }
      mgr.free_raw(*buf);
    }
    cl.run_until([&] { return seqs[1].size() == kEach && seqs[2].size() == kEach; });
    for (Rank from : {1u, 2u}) {
      for (uint32_t i = 0; i < kEach; i++) REQUIRE(seqs[from][i] == i);
    }
  }
}

TEST_CASE("concurrent puts land whole payloads") {
  Cluster cl(3);
  ObjectId target = cl.rt(0).objects().create(2048, pattern(2048, 1));
  GlobalObjectRef ref = cl.comm(0).global_ref(target);
  std::vector<CommHandle> handles;
  for (int round = 0; round < 20; round++) {
    std::vector<std::byte> a(2048, std::byte(0xAA));
    std::vector<std::byte> b(2048, std::byte(0xBB));
    handles.push_back(cl.comm(1).put(ref, std::span<const std::byte>(a)));
    handles.push_back(cl.comm(2).put(ref, std::span<const std::byte>(b)));
  }
  cl.run_until([&] {
    return std::all_of(handles.begin(), handles.end(), [](auto& h) { return h.done(); });
  });
  cl.settle();
  CHECK(cl.comm(0).stats().puts_applied == 40);
  auto bytes = read_object(cl.rt(0), target);
  bool uniform = std::all_of(bytes.begin(), bytes.end(), [&](std::byte x) { return x == bytes[0]; });
  CHECK(uniform);
  CHECK((bytes[0] == std::byte(0xAA) || bytes[0] == std::byte(0xBB)));
}

TEST_CASE("object pool recycles shells on the receive path") {
  Cluster cl(2);
  int seen = 0;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      seen++;
      ctx.comm.runtime().objects().destroy(ctx.object);
    });
    if (r == 1) hid = id;
  }
  ObjectId obj = cl.rt(0).objects().create(128, pattern(128, 4));
  for (int i = 0; i < 20; i++) {
    auto h = cl.comm(0).invoke_remote_object(1, hid, obj);
    cl.run_until([&] { return seen == i + 1; });
  }
  auto st = cl.rt(1).objects().stats();
  CHECK(st.recycled_shell_hits >= 19);
}

TEST_CASE("receiver-side errors surface from progress") {
  Cluster cl(2);
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([](HandlerContext&) {});
    if (r == 1) hid = id;
  }
  SUBCASE("unknown handler at the sender") {
    CHECK_THROWS_AS(cl.comm(0).invoke_remote_raw(1, 99, {}, 0, kHostDevice, kHostDevice), Error);
  }
  SUBCASE("destination device absent on the target") {
    auto& mgr = cl.rt(0).devices();
    auto buf = mgr.alloc_raw(kHostDevice, 8);
    cl.comm(0).invoke_remote_raw(1, hid, *buf, 8, kHostDevice, 7);
    cl.comm(0).flush();
    CHECK_THROWS_WITH_AS(
        [&] {
          for (int i = 0; i < 1000; i++) cl.comm(1).progress();
        }(),
        doctest::Contains("absent"), Error);
    mgr.free_raw(*buf);
  }
}

TEST_CASE("handlers cannot block on communicator progress") {
  Cluster cl(2);
  bool checked = false;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      if (checked) return;  // the echo below lands back here once
      checked = true;
      CHECK_FALSE(ctx.comm.progress());  // no reentrant pumping
      auto h = ctx.comm.invoke_remote_raw(ctx.source, 1, {}, 0, kHostDevice, kHostDevice);
      CHECK_THROWS_AS(h.wait(), Error);  // yielding waits are for tasks, not handlers
      CHECK_THROWS_AS(ctx.comm.flush(), Error);
    });
    if (r == 1) hid = id;
  }
  auto h = cl.comm(0).invoke_remote_raw(1, hid, {}, 0, kHostDevice, kHostDevice);
  cl.run_until([&] { return checked; });
  cl.settle();
  CHECK(cl.comm(0).stats().handlers_invoked == 1);
}

TEST_CASE("a send may be enqueued before its producer task has written the object") {
  Cluster cl(2);
  std::vector<std::byte> got;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    cl.rt(r).kernels().register_uniform("fill7", [](KernelContext& k) {
      for (auto& b : k.arg(0)) b = std::byte(7);
    });
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      got = read_object(ctx.comm.runtime(), ctx.object);
    });
    if (r == 1) hid = id;
  }
  ObjectId obj = cl.rt(0).objects().create(64);
  CHECK_THROWS_AS(cl.comm(0).invoke_remote_object(1, hid, obj), Error);

  auto& eng = cl.rt(0).engine();
  TaskId t = eng.create_task("fill7", {{obj, AccessMode::write}}, DeviceKind::gpu_sim);
  eng.submit(t);
  auto h = cl.comm(0).invoke_remote_object(1, hid, obj);
  cl.run_until([&] { return h.done() && !got.empty(); });
  CHECK(got == std::vector<std::byte>(64, std::byte(7)));
}

TEST_CASE("handler may create and submit tasks that finish later") {
  Cluster cl(2);
  TaskId spawned = 0;
  uint32_t hid = 0;
  for (Rank r = 0; r < 2; r++) {
    cl.rt(r).kernels().register_uniform("inc", [](KernelContext& k) {
      for (auto& b : k.arg(0)) b = std::byte(uint8_t(b) + 1);
    });
    uint32_t id = cl.comm(r).register_handler([&](HandlerContext& ctx) {
      auto& eng = ctx.comm.runtime().engine();
      TaskId t = eng.create_task("inc", {{ctx.object, AccessMode::readwrite}}, DeviceKind::gpu_sim);
      eng.submit(t);
      spawned = t;
    });
    if (r == 1) hid = id;
  }
  ObjectId obj = cl.rt(0).objects().create(16, std::vector<std::byte>(16, std::byte(41)));
  cl.comm(0).invoke_remote_object(1, hid, obj);
  cl.run_until([&] { return spawned != 0 && cl.rt(1).engine().test_complete(spawned); });
  auto objs = cl.rt(1).objects().live_objects();
  REQUIRE(objs.size() == 1);
  CHECK(read_object(cl.rt(1), objs[0]) == std::vector<std::byte>(16, std::byte(42)));
}
