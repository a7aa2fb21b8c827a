#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>

#include "bench.hpp"

namespace amph::bench {

namespace {

/// Shared stencil expression; the fixed left-to-right summation keeps the
/// distributed sweep bitwise identical to the serial reference.
inline double stencil7(const double* u, size_t i, size_t sx, size_t sy) {
  return (u[i] + u[i - sx] + u[i + sx] + u[i - sy] + u[i + sy] + u[i - 1] + u[i + 1]) / 7.0;
}

/// Near-cubic factorization of `n` whose per-axis counts all divide `grid`.
std::array<int, 3> factor_chunks(int n, uint64_t grid) {
  std::array<int, 3> best{};
  int best_spread = -1;
  for (int a = 1; a <= n; a++) {
    if (n % a) continue;
    for (int b = 1; b <= n / a; b++) {
      if ((n / a) % b) continue;
      int c = n / a / b;
      if (grid % a || grid % b || grid % c) continue;
      int spread = std::max({a, b, c}) - std::min({a, b, c});
      if (best_spread < 0 || spread < best_spread) {
        best = {a, b, c};
        best_spread = spread;
      }
    }
  }
  if (best_spread < 0)
    fail(ErrorCode::config_error,
         std::to_string(n) + " chunks cannot tile a " + std::to_string(grid) + "^3 grid");
  return best;
}

struct Chunk {
  int index = 0;
  int ix = 0, iy = 0, iz = 0;
  Rank home = 0;
  MobileObjectRef mobile;
  ObjectId cur = 0, next = 0, resid = 0;
  std::array<ObjectId, 6> param{};
  std::array<int, 6> neighbor{};  // chunk index, -1 at the domain boundary
  int expected = 0;
  int iter = 0;
  int halos = 0;
  bool updating = false;
  bool done = false;
  TaskId update_task = 0;
  /// Unpack tasks in flight for the current iteration, with the face they
  /// consume and its direction (sender's), for retirement and audit.
  std::vector<std::tuple<TaskId, ObjectId, uint64_t>> unpacks;
  /// Faces that arrived for a future iteration, keyed by that iteration.
  std::map<int, std::vector<ObjectId>> mailbox;
};

struct PendingSend {
  CommHandle handle;
  ObjectId face = 0;
  Rank home = 0;
};

class JacobiRun {
 public:
  JacobiRun(const BenchOptions& o, uint64_t grid, bool constant_grid)
      : o_(o), g_(grid), constant_(constant_grid), group_(o, o.ranks) {
    auto f = factor_chunks(o.chunks, grid);
    cx_ = f[0], cy_ = f[1], cz_ = f[2];
    lx_ = int(grid) / cx_, ly_ = int(grid) / cy_, lz_ = int(grid) / cz_;
    px_ = lx_ + 2, py_ = ly_ + 2, pz_ = lz_ + 2;
    register_kernels();
    register_handlers();
    build_chunks();
  }

  JacobiResult run();

 private:
  double value_at(int64_t x, int64_t y, int64_t z) const {
    return constant_ ? 1.0 : jacobi_seed_value(x, y, z);
  }

  size_t at(int x, int y, int z) const { return (size_t(x) * py_ + y) * pz_ + z; }

  uint64_t plane_cells(uint64_t dir) const {
    int axis = int(dir / 2);
    if (axis == 0) return uint64_t(ly_) * lz_;
    if (axis == 1) return uint64_t(lx_) * lz_;
    return uint64_t(lx_) * ly_;
  }

  void register_kernels();
  void register_handlers();
  void build_chunks();
  void start_iteration(Chunk& ch);
  void handle_face(Chunk& ch, ObjectId face);
  void advance_chunk(Chunk& ch);
  void sweep_sends();
  void record_residual(const Chunk& ch, double r);
  void add_partial(int iter, double partial);
  void gather_and_verify(JacobiResult& out);
  std::vector<double> read_padded(Rank home, ObjectId obj);
  std::span<const std::byte> peek_valid(Rank home, ObjectId obj);
  void audit_unpack(Chunk& ch, ObjectId face, uint64_t dir);

  BenchOptions o_;
  uint64_t g_;
  bool constant_;
  RankGroup group_;
  int cx_ = 1, cy_ = 1, cz_ = 1;
  int lx_ = 0, ly_ = 0, lz_ = 0;
  int px_ = 0, py_ = 0, pz_ = 0;
  uint32_t face_id_ = 0, resid_id_ = 0, gather_id_ = 0;
  std::vector<Chunk> chunks_;
  std::map<uint64_t, int> mobile_to_chunk_;
  std::vector<PendingSend> sends_;
  uint64_t halo_messages_ = 0;

  // residual aggregation: per-rank partials, then rank 0 totals
  std::vector<int> local_chunks_;                       // per rank
  std::vector<std::map<int, std::pair<double, int>>> partials_;  // per rank: iter -> (sum, n)
  std::map<int, std::pair<double, int>> totals_;        // rank 0: iter -> (sum, ranks heard)
  int iters_settled_ = 0;

  // gather target on rank 0
  std::vector<std::vector<double>> gathered_;
  size_t gathered_count_ = 0;
};

void JacobiRun::register_kernels() {
  int lx = lx_, ly = ly_, lz = lz_, py = py_, pz = pz_;
  for (Rank r = 0; r < group_.size(); r++) {
    auto& reg = group_.rt(r).kernels();
    reg.register_uniform("halo-pack", [=](KernelContext& k) {
      auto p = k.arg_as<const uint64_t>(0);
      auto u = k.arg_as<const double>(1);
      auto hdr = k.arg_as<uint64_t>(2);
      auto out = k.arg_as<double>(2).subspan(2);
      uint64_t dir = p[0];
      hdr[0] = dir;
      hdr[1] = p[1];
      auto cell = [&](int x, int y, int z) { return u[(size_t(x) * py + y) * pz + z]; };
      int axis = int(dir / 2);
      bool minus = dir % 2 == 0;
      size_t idx = 0;
      if (axis == 0) {
        int x = minus ? 1 : lx;
        for (int y = 1; y <= ly; y++)
          for (int z = 1; z <= lz; z++) out[idx++] = cell(x, y, z);
      } else if (axis == 1) {
        int y = minus ? 1 : ly;
        for (int x = 1; x <= lx; x++)
          for (int z = 1; z <= lz; z++) out[idx++] = cell(x, y, z);
      } else {
        int z = minus ? 1 : lz;
        for (int x = 1; x <= lx; x++)
          for (int y = 1; y <= ly; y++) out[idx++] = cell(x, y, z);
      }
    });
    reg.register_uniform("halo-unpack", [=](KernelContext& k) {
      auto hdr = k.arg_as<const uint64_t>(0);
      auto in = k.arg_as<const double>(0).subspan(2);
      auto u = k.arg_as<double>(1);
      uint64_t dir = hdr[0];
      auto slot = [&](int x, int y, int z) -> double& { return u[(size_t(x) * py + y) * pz + z]; };
      int axis = int(dir / 2);
      bool minus = dir % 2 == 0;
      size_t idx = 0;
      if (axis == 0) {
        int x = minus ? lx + 1 : 0;
        for (int y = 1; y <= ly; y++)
          for (int z = 1; z <= lz; z++) slot(x, y, z) = in[idx++];
      } else if (axis == 1) {
        int y = minus ? ly + 1 : 0;
        for (int x = 1; x <= lx; x++)
          for (int z = 1; z <= lz; z++) slot(x, y, z) = in[idx++];
      } else {
        int z = minus ? lz + 1 : 0;
        for (int x = 1; x <= lx; x++)
          for (int y = 1; y <= ly; y++) slot(x, y, z) = in[idx++];
      }
    });
    reg.register_uniform("jacobi-update", [=](KernelContext& k) {
      auto cur = k.arg_as<const double>(0);
      auto next = k.arg_as<double>(1);
      auto resid = k.arg_as<double>(2);
      size_t sx = size_t(py) * pz, sy = size_t(pz);
      double acc = 0.0;
      for (int x = 1; x <= lx; x++) {
        for (int y = 1; y <= ly; y++) {
          for (int z = 1; z <= lz; z++) {
            size_t i = (size_t(x) * py + y) * pz + z;
            double v = stencil7(cur.data(), i, sx, sy);
            next[i] = v;
            double d = v - cur[i];
            acc += d * d;
          }
        }
      }
      resid[0] = acc;
    });
  }
}

void JacobiRun::register_handlers() {
  for (Rank r = 0; r < group_.size(); r++) {
    face_id_ = group_.comm(r).register_handler([this](HandlerContext& ctx) {
      auto it = mobile_to_chunk_.find(ctx.mobile_id);
      if (it == mobile_to_chunk_.end())
        fail(ErrorCode::protocol_error, "halo for unknown mobile object");
      handle_face(chunks_[size_t(it->second)], ctx.object);
    });
    resid_id_ = group_.comm(r).register_handler([this](HandlerContext& ctx) {
      auto span = ctx.comm.runtime().devices().span_of(ctx.buffer, 0, 16);
      uint64_t iter;
      double partial;
      std::memcpy(&iter, span.data(), 8);
      std::memcpy(&partial, span.data() + 8, 8);
      add_partial(int(iter), partial);
    });
    gather_id_ = group_.comm(r).register_handler([this](HandlerContext& ctx) {
      auto span = ctx.comm.runtime().devices().span_of(ctx.buffer, 0, ctx.size);
      uint64_t index;
      std::memcpy(&index, span.data(), 8);
      auto& dst = gathered_[size_t(index)];
      dst.resize((ctx.size - 8) / sizeof(double));
      std::memcpy(dst.data(), span.data() + 8, ctx.size - 8);
      gathered_count_++;
    });
  }
}

void JacobiRun::build_chunks() {
  int total = cx_ * cy_ * cz_;
  chunks_.resize(size_t(total));
  local_chunks_.assign(group_.size(), 0);
  partials_.resize(group_.size());
  gathered_.resize(size_t(total));
  uint64_t chunk_bytes = uint64_t(px_) * py_ * pz_ * sizeof(double);

  for (int ix = 0; ix < cx_; ix++) {
    for (int iy = 0; iy < cy_; iy++) {
      for (int iz = 0; iz < cz_; iz++) {
        int c = (ix * cy_ + iy) * cz_ + iz;
        Chunk& ch = chunks_[size_t(c)];
        ch.index = c;
        ch.ix = ix, ch.iy = iy, ch.iz = iz;
        ch.home = Rank(c) % group_.size();
        local_chunks_[ch.home]++;

        auto neighbor_of = [&](int dx, int dy, int dz) {
          int nx = ix + dx, ny = iy + dy, nz = iz + dz;
          if (nx < 0 || nx >= cx_ || ny < 0 || ny >= cy_ || nz < 0 || nz >= cz_) return -1;
          return (nx * cy_ + ny) * cz_ + nz;
        };
        ch.neighbor = {neighbor_of(-1, 0, 0), neighbor_of(1, 0, 0),  neighbor_of(0, -1, 0),
                       neighbor_of(0, 1, 0),  neighbor_of(0, 0, -1), neighbor_of(0, 0, 1)};
        for (int n : ch.neighbor) {
          if (n >= 0) ch.expected++;
        }

        std::vector<double> init(size_t(px_) * py_ * pz_);
        for (int x = 0; x < px_; x++) {
          for (int y = 0; y < py_; y++) {
            for (int z = 0; z < pz_; z++) {
              int64_t gx = int64_t(ix) * lx_ + x - 1;
              int64_t gy = int64_t(iy) * ly_ + y - 1;
              int64_t gz = int64_t(iz) * lz_ + z - 1;
              init[at(x, y, z)] = value_at(gx, gy, gz);
            }
          }
        }
        auto bytes = std::as_bytes(std::span<const double>(init));
        auto& store = group_.rt(ch.home).objects();
        ch.cur = store.create(chunk_bytes, bytes);
        ch.next = store.create(chunk_bytes, bytes);
        ch.resid = store.create(sizeof(double));
        for (uint64_t d = 0; d < 6; d++) {
          uint64_t param_init[2] = {d, 0};
          ch.param[d] = store.create(16, std::as_bytes(std::span<const uint64_t>(param_init)));
        }
      }
    }
  }

  // Mobile refs are a collective creation: same order on every rank.
  for (auto& ch : chunks_) {
    for (Rank r = 0; r < group_.size(); r++) {
      MobileObjectRef m = group_.comm(r).create_mobile(ch.home);
      if (r == 0) ch.mobile = m;
    }
    mobile_to_chunk_[ch.mobile.id] = ch.index;
  }
}

void JacobiRun::start_iteration(Chunk& ch) {
  auto& rt = group_.rt(ch.home);
  for (uint64_t d = 0; d < 6; d++) {
    if (ch.neighbor[d] < 0) continue;
    {
      auto acc = rt.objects().acquire_host(ch.param[d], AccessMode::write);
      auto& view = acc.wait();
      uint64_t vals[2] = {d, uint64_t(ch.iter)};
      std::memcpy(view.bytes.data(), vals, 16);
      acc.release();
    }
    ObjectId face = rt.objects().create(16 + plane_cells(d) * sizeof(double));
    TaskId pack = rt.engine().create_task(
        "halo-pack",
        {{ch.param[d], AccessMode::read}, {ch.cur, AccessMode::read}, {face, AccessMode::write}},
        DeviceKind::gpu_sim);
    rt.engine().submit(pack);
    auto h = group_.comm(ch.home).invoke_remote_object(chunks_[size_t(ch.neighbor[d])].mobile,
                                                       face_id_, face);
    sends_.push_back({std::move(h), face, ch.home});
    halo_messages_++;
  }
  auto early = ch.mailbox.find(ch.iter);
  if (early != ch.mailbox.end()) {
    auto faces = std::move(early->second);
    ch.mailbox.erase(early);
    for (ObjectId f : faces) handle_face(ch, f);
  }
}

void JacobiRun::handle_face(Chunk& ch, ObjectId face) {
  auto hdr_bytes = peek_valid(ch.home, face);
  uint64_t dir, iter;
  std::memcpy(&dir, hdr_bytes.data(), 8);
  std::memcpy(&iter, hdr_bytes.data() + 8, 8);
  if (int(iter) > ch.iter) {
    ch.mailbox[int(iter)].push_back(face);
    return;
  }
  if (int(iter) < ch.iter)
    fail(ErrorCode::invalid_state, "halo arrived for an already finished iteration");
  auto& eng = group_.rt(ch.home).engine();
  TaskId unpack = eng.create_task(
      "halo-unpack", {{face, AccessMode::read}, {ch.cur, AccessMode::readwrite}},
      DeviceKind::gpu_sim);
  eng.submit(unpack);
  ch.unpacks.emplace_back(unpack, face, dir);
  ch.halos++;
}

std::span<const std::byte> JacobiRun::peek_valid(Rank home, ObjectId obj) {
  auto& store = group_.rt(home).objects();
  for (const auto& c : store.copy_table(obj)) {
    if (c.state == CopyState::valid) return store.peek_copy(obj, c.device_id);
  }
  fail(ErrorCode::invalid_state, "object has no valid copy to inspect");
}

void JacobiRun::audit_unpack(Chunk& ch, ObjectId face, uint64_t dir) {
  auto face_bytes = peek_valid(ch.home, face);
  auto cur_bytes = peek_valid(ch.home, ch.cur);
  const double* sent = reinterpret_cast<const double*>(face_bytes.data() + 16);
  const double* u = reinterpret_cast<const double*>(cur_bytes.data());
  auto ghost = [&](int x, int y, int z) { return u[at(x, y, z)]; };
  int axis = int(dir / 2);
  bool minus = dir % 2 == 0;
  size_t idx = 0;
  bool ok = true;
  if (axis == 0) {
    int x = minus ? lx_ + 1 : 0;
    for (int y = 1; y <= ly_ && ok; y++)
      for (int z = 1; z <= lz_; z++) ok = ok && ghost(x, y, z) == sent[idx++];
  } else if (axis == 1) {
    int y = minus ? ly_ + 1 : 0;
    for (int x = 1; x <= lx_ && ok; x++)
      for (int z = 1; z <= lz_; z++) ok = ok && ghost(x, y, z) == sent[idx++];
  } else {
    int z = minus ? lz_ + 1 : 0;
    for (int x = 1; x <= lx_ && ok; x++)
      for (int y = 1; y <= ly_; y++) ok = ok && ghost(x, y, z) == sent[idx++];
  }
  if (!ok)
    fail(ErrorCode::invalid_state,
         "halo audit: ghost layer of chunk " + std::to_string(ch.index) +
             " does not match the sent boundary layer");
}

void JacobiRun::advance_chunk(Chunk& ch) {
  if (ch.done) return;
  auto& eng = group_.rt(ch.home).engine();
  if (!ch.updating) {
    if (ch.halos < ch.expected) return;
    for (auto& [task, face, dir] : ch.unpacks) {
      if (!eng.test_complete(task)) return;
    }
    for (auto& [task, face, dir] : ch.unpacks) {
      if (o_.audit) audit_unpack(ch, face, dir);
      group_.rt(ch.home).objects().destroy(face);
    }
    ch.unpacks.clear();
    ch.update_task = eng.create_task(
        "jacobi-update",
        {{ch.cur, AccessMode::read}, {ch.next, AccessMode::readwrite}, {ch.resid, AccessMode::write}},
        DeviceKind::gpu_sim);
    eng.submit(ch.update_task);
    ch.updating = true;
    return;
  }
  if (!eng.test_complete(ch.update_task)) return;
  double r;
  std::memcpy(&r, peek_valid(ch.home, ch.resid).data(), sizeof(double));
  record_residual(ch, r);
  std::swap(ch.cur, ch.next);
  ch.iter++;
  ch.halos = 0;
  ch.updating = false;
  if (ch.iter >= o_.iters) {
    ch.done = true;
    return;
  }
  start_iteration(ch);
}

void JacobiRun::record_residual(const Chunk& ch, double r) {
  auto& slot = partials_[ch.home][ch.iter];
  slot.first += r;
  slot.second++;
  if (slot.second < local_chunks_[ch.home]) return;
  double partial = slot.first;
  int iter = ch.iter;
  partials_[ch.home].erase(iter);
  if (ch.home == 0) {
    add_partial(iter, partial);
    return;
  }
  auto& mgr = group_.rt(ch.home).devices();
  auto buf = mgr.alloc_raw(kHostDevice, 16);
  auto span = mgr.span_of(*buf, 0, 16);
  uint64_t it64 = uint64_t(iter);
  std::memcpy(span.data(), &it64, 8);
  std::memcpy(span.data() + 8, &partial, 8);
  group_.comm(ch.home).invoke_remote_raw(0, resid_id_, *buf, 16, kHostDevice, kHostDevice);
  mgr.free_raw(*buf);
}

void JacobiRun::add_partial(int iter, double partial) {
  auto& slot = totals_[iter];
  slot.first += partial;
  slot.second++;
  if (slot.second == int(group_.size())) iters_settled_++;
}

void JacobiRun::sweep_sends() {
  for (size_t i = 0; i < sends_.size();) {
    auto& s = sends_[i];
    if (s.handle.failed()) fail(ErrorCode::io_error, "halo send failed: " + s.handle.diagnostic());
    if (s.handle.done()) {
      group_.rt(s.home).objects().destroy(s.face);
      s = std::move(sends_.back());
      sends_.pop_back();
    } else {
      i++;
    }
  }
}

std::vector<double> JacobiRun::read_padded(Rank home, ObjectId obj) {
  std::vector<double> out(size_t(px_) * py_ * pz_);
  auto fut = group_.rt(home).objects().copy_to(
      obj, std::as_writable_bytes(std::span<double>(out)));
  while (!fut.poll()) group_.pump();
  fut.wait();
  return out;
}

void JacobiRun::gather_and_verify(JacobiResult& out) {
  uint64_t padded_bytes = uint64_t(px_) * py_ * pz_ * sizeof(double);
  for (auto& ch : chunks_) {
    if (ch.home == 0) {
      gathered_[size_t(ch.index)] = read_padded(0, ch.cur);
      gathered_count_++;
      continue;
    }
    auto padded = read_padded(ch.home, ch.cur);
    auto& mgr = group_.rt(ch.home).devices();
    auto buf = mgr.alloc_raw(kHostDevice, 8 + padded_bytes);
    auto span = mgr.span_of(*buf, 0, 8 + padded_bytes);
    uint64_t index = uint64_t(ch.index);
    std::memcpy(span.data(), &index, 8);
    std::memcpy(span.data() + 8, padded.data(), padded_bytes);
    group_.comm(ch.home).invoke_remote_raw(0, gather_id_, *buf, 8 + padded_bytes, kHostDevice,
                                           kHostDevice);
    mgr.free_raw(*buf);
  }
  group_.run_until([&] { return gathered_count_ == chunks_.size(); });

  if (g_ > 64) {
    out.verified = "skipped";
    return;
  }
  auto reference = jacobi_serial(g_, o_.iters,
                                 [this](int64_t x, int64_t y, int64_t z) { return value_at(x, y, z); });
  double max_diff = 0;
  for (const auto& ch : chunks_) {
    const auto& padded = gathered_[size_t(ch.index)];
    for (int x = 1; x <= lx_; x++) {
      for (int y = 1; y <= ly_; y++) {
        for (int z = 1; z <= lz_; z++) {
          size_t gx = size_t(ch.ix) * lx_ + x - 1;
          size_t gy = size_t(ch.iy) * ly_ + y - 1;
          size_t gz = size_t(ch.iz) * lz_ + z - 1;
          double want = reference[(gx * g_ + gy) * g_ + gz];
          double got = padded[at(x, y, z)];
          max_diff = std::max(max_diff, std::abs(got - want));
        }
      }
    }
  }
  out.max_abs_diff = max_diff;
  out.verified = max_diff <= 1e-12 ? "yes" : "no";
}

JacobiResult JacobiRun::run() {
  auto t0 = std::chrono::steady_clock::now();
  for (auto& ch : chunks_) start_iteration(ch);
  group_.run_until([&] {
    for (auto& ch : chunks_) advance_chunk(ch);
    sweep_sends();
    bool all_done = true;
    for (auto& ch : chunks_) all_done = all_done && ch.done;
    return all_done && sends_.empty() && iters_settled_ == o_.iters;
  });
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  JacobiResult out;
  out.grid = g_;
  out.chunks = cx_ * cy_ * cz_;
  out.ranks = group_.size();
  out.iters = o_.iters;
  out.halo_messages = halo_messages_;
  if (!o_.deterministic) out.mean_iter_seconds = seconds / o_.iters;
  out.residuals.resize(size_t(o_.iters));
  for (auto& [iter, slot] : totals_) out.residuals[size_t(iter)] = slot.first;
  out.final_residual = out.residuals.empty() ? 0.0 : out.residuals.back();
  gather_and_verify(out);
  if (o_.dump_stats) group_.dump_stats(std::cerr, "jacobi3d " + std::to_string(g_) + "^3");
  return out;
}

}  // namespace

double jacobi_seed_value(int64_t x, int64_t y, int64_t z) {
  return double(((x + 1) * 31 + (y + 1) * 17 + (z + 1) * 7) % 97) / 96.0;
}

std::vector<double> jacobi_serial(uint64_t grid, int iters,
                                  const std::function<double(int64_t, int64_t, int64_t)>& value) {
  size_t p = grid + 2;
  std::vector<double> a(p * p * p);
  for (size_t x = 0; x < p; x++) {
    for (size_t y = 0; y < p; y++) {
      for (size_t z = 0; z < p; z++) {
        a[(x * p + y) * p + z] = value(int64_t(x) - 1, int64_t(y) - 1, int64_t(z) - 1);
      }
    }
  }
  std::vector<double> b = a;
  size_t sx = p * p, sy = p;
  for (int it = 0; it < iters; it++) {
    for (size_t x = 1; x <= grid; x++) {
      for (size_t y = 1; y <= grid; y++) {
        for (size_t z = 1; z <= grid; z++) {
          size_t i = (x * p + y) * p + z;
          b[i] = stencil7(a.data(), i, sx, sy);
        }
      }
    }
    std::swap(a, b);
  }
  std::vector<double> interior(grid * grid * grid);
  for (size_t x = 0; x < grid; x++) {
    for (size_t y = 0; y < grid; y++) {
      for (size_t z = 0; z < grid; z++) {
        interior[(x * grid + y) * grid + z] = a[((x + 1) * p + y + 1) * p + z + 1];
      }
    }
  }
  return interior;
}

JacobiResult run_jacobi3d(const BenchOptions& o, uint64_t grid, bool constant_grid) {
  if (o.iters < 1) fail(ErrorCode::config_error, "iteration count must be at least 1");
  if (o.chunks < int(o.ranks))
    fail(ErrorCode::config_error, "over-decomposition requires at least one chunk per rank");
  JacobiRun run(o, grid, constant_grid);
  return run.run();
}

CsvTable JacobiResult::csv(const BenchOptions& o) const {
  CsvTable t;
  t.header = {"benchmark", "variant", "grid", "chunks", "ranks", "iters", "mean_iter_ms",
              "final_residual", "max_abs_diff", "halo_messages", "verified"};
  t.rows.push_back({"jacobi3d", o.variant(), std::to_string(grid), std::to_string(chunks),
                    std::to_string(ranks), std::to_string(iters),
                    format_double(mean_iter_seconds * 1e3), format_double(final_residual),
                    format_double(max_abs_diff), std::to_string(halo_messages), verified});
  return t;
}

}  // namespace amph::bench
