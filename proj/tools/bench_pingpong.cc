#include <chrono>
#include <cstring>
#include <iostream>

#include "bench.hpp"

namespace amph::bench {

namespace {

std::vector<std::byte> payload_pattern(uint64_t size, uint64_t seed) {
  std::vector<std::byte> v(size);
  uint64_t h = seed * 0x9E3779B97F4A7C15ull + 1;
  for (uint64_t i = 0; i < size; i++) {
    h = h * 6364136223846793005ull + 1442695040888963407ull;
    v[i] = std::byte(h >> 56);
  }
  return v;
}

std::vector<std::byte> object_bytes(Runtime& rt, ObjectId obj) {
  auto acc = rt.objects().acquire_host(obj, AccessMode::read);
  auto& view = acc.wait();
  std::vector<std::byte> out(view.bytes.begin(), view.bytes.end());
  acc.release();
  return out;
}

struct WireDelta {
  uint64_t frames = 0;
  uint64_t staging = 0;
};

WireDelta wire_totals(RankGroup& g) {
  WireDelta d;
  for (Rank r = 0; r < g.size(); r++) {
    auto st = g.comm(r).stats();
    d.frames += st.frames_sent;
    d.staging += st.staging_copies;
  }
  return d;
}

/// Echoes `iters` round trips of one payload size through raw device
/// buffers: rank 1's handler returns the received (dying) buffer as-is.
PingpongCell pingpong_raw(const BenchOptions& o, uint64_t size) {
  RankGroup g(o, 2);
  auto expected = payload_pattern(size, size);
  int pongs = 0;
  bool verified = true;

  uint32_t pong_id = 0;
  for (Rank r = 0; r < 2; r++) {
    g.comm(r).register_handler([&](HandlerContext& ctx) {
      ctx.comm.invoke_remote_raw(ctx.source, pong_id, ctx.buffer, ctx.size, ctx.buffer_device, 1);
    });
    pong_id = g.comm(r).register_handler([&](HandlerContext& ctx) {
      if (ctx.size != expected.size()) {
        verified = false;
      } else if (ctx.size > 0) {
        auto span = ctx.comm.runtime().devices().span_of(ctx.buffer, 0, ctx.size);
        verified = verified && std::memcmp(span.data(), expected.data(), ctx.size) == 0;
      }
      pongs++;
    });
  }

  auto& mgr = g.rt(0).devices();
  auto src = mgr.alloc_raw(1, size);
  if (!src) fail(ErrorCode::out_of_device_memory, "ping-pong source exceeds device memory");
  {
    auto ev = mgr.enqueue_copy(MemRef::host(expected.data()), MemRef::device(*src), size, 1,
                               mgr.h2d_queue(1));
    mgr.wait_event(ev);
  }

  WireDelta before = wire_totals(g);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < o.iters; i++) {
    g.comm(0).invoke_remote_raw(1, 1, *src, size, 1, 1);
    g.run_until([&] { return pongs == i + 1; });
  }
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  WireDelta after = wire_totals(g);
  mgr.free_raw(*src);

  PingpongCell cell;
  cell.op = "raw";
  cell.bytes = size;
  cell.verified = verified && pongs == o.iters;
  cell.frames_per_rt = double(after.frames - before.frames) / o.iters;
  cell.staging_copies_per_rt = double(after.staging - before.staging) / o.iters;
  if (!o.deterministic) {
    cell.mean_rtt_us = seconds / o.iters * 1e6;
    cell.bandwidth_mib_s = 2.0 * double(size) * o.iters / seconds / double(kMiB);
  }
  if (o.dump_stats) g.dump_stats(std::cerr, "pingpong raw " + std::to_string(size) + "B");
  return cell;
}

/// Echoes hetero_objects: each round trip materializes one object per side,
/// which the receiving handler sends back and both sides destroy afterwards.
PingpongCell pingpong_object(const BenchOptions& o, uint64_t size) {
  RankGroup g(o, 2);
  int pongs = 0;
  bool verified = true;
  std::vector<std::byte> expected;
  std::vector<std::pair<CommHandle, ObjectId>> retired[2];

  uint32_t pong_id = 0;
  for (Rank r = 0; r < 2; r++) {
    g.comm(r).register_handler([&, r](HandlerContext& ctx) {
      auto h = ctx.comm.invoke_remote_object(ctx.source, pong_id, ctx.object);
      retired[r].emplace_back(std::move(h), ctx.object);
    });
    pong_id = g.comm(r).register_handler([&](HandlerContext& ctx) {
      verified = verified && object_bytes(ctx.comm.runtime(), ctx.object) == expected;
      ctx.comm.runtime().objects().destroy(ctx.object);
      pongs++;
    });
  }

  auto sweep = [&] {
    for (Rank r = 0; r < 2; r++) {
      auto& list = retired[r];
      for (size_t i = 0; i < list.size();) {
        if (list[i].first.done()) {
          g.rt(r).objects().destroy(list[i].second);
          list[i] = std::move(list.back());
          list.pop_back();
        } else {
          i++;
        }
      }
    }
  };

  WireDelta before = wire_totals(g);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < o.iters; i++) {
    expected = payload_pattern(size, uint64_t(i));
    ObjectId obj = g.rt(0).objects().create(size, expected);
    auto h = g.comm(0).invoke_remote_object(1, 1, obj);
    g.run_until([&] { return pongs == i + 1; });
    h.wait();
    g.rt(0).objects().destroy(obj);
    sweep();
  }
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  WireDelta after = wire_totals(g);
  g.run_until([&] {
    sweep();
    return retired[0].empty() && retired[1].empty();
  });

  PingpongCell cell;
  cell.op = "object";
  cell.bytes = size;
  cell.verified = verified && pongs == o.iters;
  cell.frames_per_rt = double(after.frames - before.frames) / o.iters;
  cell.staging_copies_per_rt = double(after.staging - before.staging) / o.iters;
  if (!o.deterministic) {
    cell.mean_rtt_us = seconds / o.iters * 1e6;
    cell.bandwidth_mib_s = 2.0 * double(size) * o.iters / seconds / double(kMiB);
  }
  if (o.dump_stats) g.dump_stats(std::cerr, "pingpong object " + std::to_string(size) + "B");
  return cell;
}

/// Echoes through put: rank 0 puts into rank 1's target object, whose landing
/// callback puts the bytes straight back into rank 0's object.
PingpongCell pingpong_put(const BenchOptions& o, uint64_t size) {
  RankGroup g(o, 2);
  int pongs = 0;

  ObjectId a = g.rt(0).objects().create(size, std::vector<std::byte>(size, std::byte(0)));
  ObjectId b = g.rt(1).objects().create(size, std::vector<std::byte>(size, std::byte(0)));
  GlobalObjectRef ref_a = g.comm(0).global_ref(a);
  GlobalObjectRef ref_b = g.comm(1).global_ref(b);

  uint32_t pong_id = 0;
  for (Rank r = 0; r < 2; r++) {
    g.comm(r).register_handler([&](HandlerContext& ctx) { ctx.comm.put(ref_a, b, pong_id); });
    pong_id = g.comm(r).register_handler([&](HandlerContext&) { pongs++; });
  }

  bool verified = true;
  WireDelta before = wire_totals(g);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < o.iters; i++) {
    auto expected = payload_pattern(size, uint64_t(i) + 7);
    {
      auto acc = g.rt(0).objects().acquire_host(a, AccessMode::write);
      auto& view = acc.wait();
      std::memcpy(view.bytes.data(), expected.data(), size);
      acc.release();
    }
    g.comm(0).put(ref_b, a, 1);
    g.run_until([&] { return pongs == i + 1; });
    verified = verified && object_bytes(g.rt(0), a) == expected;
  }
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  WireDelta after = wire_totals(g);

  PingpongCell cell;
  cell.op = "put";
  cell.bytes = size;
  cell.verified = verified && pongs == o.iters;
  cell.frames_per_rt = double(after.frames - before.frames) / o.iters;
  cell.staging_copies_per_rt = double(after.staging - before.staging) / o.iters;
  if (!o.deterministic) {
    cell.mean_rtt_us = seconds / o.iters * 1e6;
    cell.bandwidth_mib_s = 2.0 * double(size) * o.iters / seconds / double(kMiB);
  }
  if (o.dump_stats) g.dump_stats(std::cerr, "pingpong put " + std::to_string(size) + "B");
  return cell;
}

}  // namespace

PingpongResult run_pingpong(const BenchOptions& o) {
  PingpongResult result;
  for (uint64_t size : o.sizes) {
    result.cells.push_back(pingpong_raw(o, size));
    result.cells.push_back(pingpong_object(o, size));
    result.cells.push_back(pingpong_put(o, size));
  }
  return result;
}

CsvTable PingpongResult::csv(const BenchOptions& o) const {
  CsvTable t;
  t.header = {"benchmark", "variant", "transport", "op", "bytes", "iters", "mean_rtt_us",
              "bandwidth_mib_s", "frames_per_rt", "staging_copies_per_rt", "verified"};
  for (const auto& c : cells) {
    t.rows.push_back({"pingpong", o.variant(), o.transport, c.op, std::to_string(c.bytes),
                      std::to_string(o.iters), format_double(c.mean_rtt_us),
                      format_double(c.bandwidth_mib_s), format_double(c.frames_per_rt),
                      format_double(c.staging_copies_per_rt), c.verified ? "yes" : "no"});
  }
  return t;
}

}  // namespace amph::bench
