#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <mutex>
#include <random>
#include <sstream>

#include "amph/engine.hpp"

using namespace amph;

namespace {

RuntimeConfig det_config() {
  RuntimeConfig cfg;
  cfg.deterministic = true;
  return cfg;
}

struct EngineFix {
  RuntimeConfig cfg;
  DeviceManager mgr;
  KernelRegistry kernels;
  std::unique_ptr<ObjectStore> store;
  std::unique_ptr<Engine> engine;

  explicit EngineFix(int gpus, RuntimeConfig c = det_config(), uint64_t gpu_mem = 8 * kMiB,
                     std::unique_ptr<SchedulerPolicy> policy = nullptr)
      : cfg(c), mgr(cfg) {
    DeviceDescriptor host;
    host.kind = DeviceKind::host;
    host.memory_capacity = 64 * kMiB;
    mgr.register_device(host);
    for (int i = 0; i < gpus; ++i) {
      DeviceDescriptor g;
      g.kind = DeviceKind::gpu_sim;
      g.memory_capacity = gpu_mem;
      mgr.register_device(g);
    }
    mgr.start();
    store = std::make_unique<ObjectStore>(mgr, cfg);
    if (!policy) policy = std::make_unique<FifoLeastLoadedPolicy>();
    engine = std::make_unique<Engine>(*store, kernels, std::move(policy), cfg);
  }

  ObjectId object(uint64_t size, uint8_t seed) {
    std::vector<std::byte> init(size);
    for (size_t i = 0; i < size; ++i) init[i] = std::byte(uint8_t(seed + i * 7));
    return store->create(size, init);
  }

  std::vector<uint8_t> read_back(ObjectId id) {
    auto acc = store->acquire_host(id, AccessMode::read);
    auto& view = acc.wait();
    std::vector<uint8_t> out(view.bytes.size());
    std::memcpy(out.data(), view.bytes.data(), out.size());
    return out;
  }
};

std::vector<uint8_t> host_pattern(size_t n, uint8_t seed) {
  std::vector<uint8_t> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = uint8_t(seed + i * 7);
  return v;
}

}  // namespace

TEST_CASE("a single task runs its kernel on the preferred device kind") {
  EngineFix f(1);
  KernelId add = f.kernels.register_uniform("add_five", [](KernelContext& ctx) {
    for (auto& b : ctx.arg_as<uint8_t>(0)) b = uint8_t(b + 5);
  });
  (void)add;
  ObjectId x = f.object(256, 10);
  TaskId t = f.engine->create_task("add_five", {{x, AccessMode::readwrite}}, DeviceKind::gpu_sim);
  CHECK(f.engine->state(t) == TaskState::created);
  f.engine->submit(t);
  CHECK(f.engine->state(t) == TaskState::submitted);
  CHECK_FALSE(f.engine->test_complete(t));
  f.engine->wait(t);
  CHECK(f.engine->test_complete(t));
  CHECK(f.engine->status(t).device == 1);

  auto got = f.read_back(x);
  auto want = host_pattern(256, 10);
  for (auto& b : want) b = uint8_t(b + 5);
  CHECK(got == want);

  auto st = f.engine->stats();
  CHECK(st.submitted == 1);
  CHECK(st.completed == 1);
  CHECK(st.issued == 1);
}

TEST_CASE("create_task validates kernel, device kind, and objects") {
  EngineFix f(1);
  f.kernels.register_kernel("gpu_only");
  f.kernels.add_impl(f.kernels.id_of("gpu_only"), DeviceKind::gpu_sim, [](KernelContext&) {});
  ObjectId x = f.object(64, 0);

  CHECK_THROWS_AS(
      (void)f.engine->create_task("nope", {{x, AccessMode::read}}, DeviceKind::gpu_sim), Error);
  // no cpu implementation
  CHECK_THROWS_AS(
      (void)f.engine->create_task("gpu_only", {{x, AccessMode::read}}, DeviceKind::cpu_sim), Error);
  f.kernels.register_uniform("anywhere", [](KernelContext&) {});
  // implementation exists but no cpu device is registered
  CHECK_THROWS_AS(
      (void)f.engine->create_task("anywhere", {{x, AccessMode::read}}, DeviceKind::cpu_sim), Error);
  f.store->destroy(x);
  CHECK_THROWS_AS(
      (void)f.engine->create_task("anywhere", {{x, AccessMode::read}}, DeviceKind::gpu_sim), Error);
}

TEST_CASE("duplicate objects in the arg list collapse to a merged access") {
  EngineFix f(1);
  f.kernels.register_uniform("self_xor", [](KernelContext& ctx) {
    auto a = ctx.arg_as<uint8_t>(0);
    auto b = ctx.arg_as<uint8_t>(1);
    for (size_t i = 0; i < a.size(); ++i) a[i] = uint8_t(a[i] ^ b[i]);
  });
  ObjectId x = f.object(64, 9);
  // same object as READ and WRITE: one READWRITE access, two kernel arg slots
  TaskId t = f.engine->create_task(
      "self_xor", {{x, AccessMode::write}, {x, AccessMode::read}}, DeviceKind::gpu_sim);
  f.engine->submit(t);
  f.engine->wait(t);
  auto got = f.read_back(x);
  CHECK(got == std::vector<uint8_t>(64, 0));  // x ^ x
}

TEST_CASE("conflicting tasks run in submission order") {
  EngineFix f(2);
  std::vector<int> order;
  std::mutex order_mu;
  auto tag = [&](int n) {
    return [&, n](KernelContext&) {
      std::lock_guard<std::mutex> g(order_mu);
      order.push_back(n);
    };
  };
  f.kernels.register_uniform("w1", tag(1));
  f.kernels.register_uniform("w2", tag(2));
  f.kernels.register_uniform("r3", tag(3));
  ObjectId x = f.object(64, 0);

  TaskId t1 = f.engine->create_task("w1", {{x, AccessMode::write}}, DeviceKind::gpu_sim);
  TaskId t2 = f.engine->create_task("w2", {{x, AccessMode::write}}, DeviceKind::gpu_sim);
  TaskId t3 = f.engine->create_task("r3", {{x, AccessMode::read}}, DeviceKind::gpu_sim);
  f.engine->submit({t1, t2, t3});
  f.engine->drain();
  CHECK(order == std::vector<int>{1, 2, 3});
}

TEST_CASE("read-only tasks on one object issue concurrently on two devices") {
  EngineFix f(2);
  f.kernels.register_uniform("observe", [](KernelContext&) {});
  ObjectId x = f.object(64, 4);
  TaskId a = f.engine->create_task("observe", {{x, AccessMode::read}}, DeviceKind::gpu_sim);
  TaskId b = f.engine->create_task("observe", {{x, AccessMode::read}}, DeviceKind::gpu_sim);
  f.engine->submit({a, b});
  f.engine->step();
  // both in flight before either retires
  CHECK(f.engine->state(a) == TaskState::issued);
  CHECK(f.engine->state(b) == TaskState::issued);
  f.engine->drain();
  CHECK(f.engine->status(a).device != f.engine->status(b).device);
}

TEST_CASE("explicit dependencies order a diamond") {
  EngineFix f(2);
  std::vector<char> order;
  std::mutex order_mu;
  auto tag = [&](char c) {
    return [&, c](KernelContext&) {
      std::lock_guard<std::mutex> g(order_mu);
      order.push_back(c);
    };
  };
  f.kernels.register_uniform("ka", tag('a'));
  f.kernels.register_uniform("kb", tag('b'));
  f.kernels.register_uniform("kc", tag('c'));
  f.kernels.register_uniform("kd", tag('d'));

  TaskId a = f.engine->create_task("ka", {}, DeviceKind::gpu_sim);
  TaskId b = f.engine->create_task("kb", {}, DeviceKind::gpu_sim);
  TaskId c = f.engine->create_task("kc", {}, DeviceKind::gpu_sim);
  TaskId d = f.engine->create_task("kd", {}, DeviceKind::gpu_sim);
  f.engine->add_dependency(b, a);
  f.engine->add_dependency(c, a);
  f.engine->add_dependency(d, b);
  f.engine->add_dependency(d, c);
  f.engine->submit({d, c, b, a});  // submission order must not matter here
  f.engine->drain();

  REQUIRE(order.size() == 4);
  CHECK(order.front() == 'a');
  CHECK(order.back() == 'd');
}

TEST_CASE("dependency cycles are rejected at submit and name the cycle") {
  EngineFix f(1);
  f.kernels.register_uniform("noop", [](KernelContext&) {});
  TaskId a = f.engine->create_task("noop", {}, DeviceKind::gpu_sim);
  TaskId b = f.engine->create_task("noop", {}, DeviceKind::gpu_sim);
  f.engine->add_dependency(a, b);
  f.engine->add_dependency(b, a);
  try {
    f.engine->submit({a, b});
    FAIL("expected a cycle error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::cycle_detected);
    std::string msg = e.what();
    CHECK(msg.find(std::to_string(a)) != std::string::npos);
    CHECK(msg.find(std::to_string(b)) != std::string::npos);
  }
  // both tasks remain unsubmitted and the engine stays usable
  CHECK(f.engine->state(a) == TaskState::created);
  CHECK(f.engine->incomplete() == 0);
}

TEST_CASE("dependencies cannot be added after submission") {
  EngineFix f(1);
  f.kernels.register_uniform("noop", [](KernelContext&) {});
  TaskId a = f.engine->create_task("noop", {}, DeviceKind::gpu_sim);
  TaskId b = f.engine->create_task("noop", {}, DeviceKind::gpu_sim);
  f.engine->submit(a);
  CHECK_THROWS_AS(f.engine->add_dependency(b, a), Error);
  CHECK_THROWS_AS(f.engine->submit(a), Error);  // double submit
  f.engine->drain();
}

TEST_CASE("kernel failure propagates to dependents with the root cause") {
  EngineFix f(1);
  f.kernels.register_uniform("boom", [](KernelContext&) { throw std::runtime_error("sim fault"); });
  f.kernels.register_uniform("after", [](KernelContext& ctx) {
    for (auto& b : ctx.arg_as<uint8_t>(0)) b = 1;
  });
  f.kernels.register_uniform("bystander", [](KernelContext&) {});

  ObjectId x = f.object(64, 0);
  ObjectId y = f.object(64, 0);
  TaskId t1 = f.engine->create_task("boom", {{x, AccessMode::write}}, DeviceKind::gpu_sim);
  TaskId t2 = f.engine->create_task("after", {{x, AccessMode::readwrite}}, DeviceKind::gpu_sim);
  TaskId t3 = f.engine->create_task("after", {{x, AccessMode::read}}, DeviceKind::gpu_sim);
  TaskId t4 = f.engine->create_task("bystander", {{y, AccessMode::read}}, DeviceKind::gpu_sim);
  f.engine->submit({t1, t2, t3, t4});
  f.engine->drain();

  CHECK(f.engine->state(t1) == TaskState::failed);
  CHECK(f.engine->state(t2) == TaskState::failed);
  CHECK(f.engine->state(t3) == TaskState::failed);
  CHECK(f.engine->state(t4) == TaskState::complete);
  CHECK(f.engine->status(t1).failure_root == t1);
  CHECK(f.engine->status(t2).failure_root == t1);
  CHECK(f.engine->status(t3).failure_root == t1);
  CHECK(f.engine->status(t1).diagnostic.find("sim fault") != std::string::npos);

  try {
    f.engine->wait(t3);
    FAIL("expected task_failed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::task_failed);
    CHECK(std::string(e.what()).find("root cause task " + std::to_string(t1)) !=
          std::string::npos);
  }
}

TEST_CASE("reading an object nobody wrote fails the task at issue") {
  EngineFix f(1);
  f.kernels.register_uniform("consume", [](KernelContext&) {});
  ObjectId x = f.store->create(64);  // never initialized
  TaskId t = f.engine->create_task("consume", {{x, AccessMode::read}}, DeviceKind::gpu_sim);
  f.engine->submit(t);
  f.engine->drain();
  CHECK(f.engine->state(t) == TaskState::failed);
  CHECK(f.engine->status(t).diagnostic.find("uninitialized") != std::string::npos);
}

TEST_CASE("oversized arguments fail the task with the memory diagnostic") {
  auto cfg = det_config();
  cfg.device_pool_fraction = 1.0;
  EngineFix f(1, cfg, 4096);
  f.kernels.register_uniform("consume", [](KernelContext&) {});
  ObjectId big = f.object(64 * 1024, 1);  // cannot fit on the 4 KiB device
  TaskId t = f.engine->create_task("consume", {{big, AccessMode::read}}, DeviceKind::gpu_sim);
  f.engine->submit(t);
  f.engine->drain();
  CHECK(f.engine->state(t) == TaskState::failed);
  CHECK(f.engine->status(t).diagnostic.find("memory") != std::string::npos);
}

TEST_CASE("host pins defer conflicting tasks until released") {
  EngineFix f(1);
  f.kernels.register_uniform("bump", [](KernelContext& ctx) {
    for (auto& b : ctx.arg_as<uint8_t>(0)) b = uint8_t(b + 1);
  });
  ObjectId x = f.object(64, 0);

  auto pin = f.store->acquire_host(x, AccessMode::write);
  REQUIRE(pin.poll());
  TaskId t = f.engine->create_task("bump", {{x, AccessMode::readwrite}}, DeviceKind::gpu_sim);
  f.engine->submit(t);
  for (int i = 0; i < 5; ++i) f.engine->step();
  CHECK(f.engine->state(t) == TaskState::blocked);

  std::memset(pin.view().bytes.data(), 7, 64);
  pin.release();
  f.engine->wait(t);
  CHECK(f.read_back(x) == std::vector<uint8_t>(64, 8));

  // a read pin lets read tasks through while blocking writers
  auto rpin = f.store->acquire_host(x, AccessMode::read);
  REQUIRE(rpin.poll());
  f.kernels.register_uniform("peek", [](KernelContext&) {});
  TaskId rt = f.engine->create_task("peek", {{x, AccessMode::read}}, DeviceKind::gpu_sim);
  TaskId wt = f.engine->create_task("bump", {{x, AccessMode::readwrite}}, DeviceKind::gpu_sim);
  f.engine->submit({rt, wt});
  for (int i = 0; i < 5; ++i) f.engine->step();
  CHECK(f.engine->state(rt) == TaskState::complete);
  CHECK(f.engine->state(wt) != TaskState::complete);
  rpin.release();
  f.engine->drain();
  CHECK(f.engine->state(wt) == TaskState::complete);
}

TEST_CASE("kernels may not call back into the engine") {
  EngineFix f(1);
  Engine* eng = nullptr;
  f.kernels.register_uniform("recurse", [&](KernelContext&) {
    eng->submit(std::vector<TaskId>{});
  });
  eng = f.engine.get();
  TaskId t = f.engine->create_task("recurse", {}, DeviceKind::gpu_sim);
  f.engine->submit(t);
  f.engine->drain();
  CHECK(f.engine->state(t) == TaskState::failed);
  CHECK(f.engine->status(t).diagnostic.find("reentrant") != std::string::npos);
}

TEST_CASE("trace log records every state transition") {
  EngineFix f(1);
  f.kernels.register_uniform("noop", [](KernelContext&) {});
  std::ostringstream trace;
  f.engine->set_trace(&trace);
  ObjectId x = f.object(64, 0);
  TaskId a = f.engine->create_task("noop", {{x, AccessMode::write}}, DeviceKind::gpu_sim);
  TaskId b = f.engine->create_task("noop", {{x, AccessMode::read}}, DeviceKind::gpu_sim);
  f.engine->submit({a, b});
  f.engine->drain();
  f.engine->set_trace(nullptr);

  std::string log = trace.str();
  CHECK(log.find("# engine trace policy=fifo-least-loaded") == 0);
  CHECK(log.find("task=" + std::to_string(a) + " from=created to=submitted") != std::string::npos);
  CHECK(log.find("task=" + std::to_string(b) + " from=submitted to=blocked") != std::string::npos);
  CHECK(log.find("task=" + std::to_string(a) + " from=runnable to=issued device=1") !=
        std::string::npos);
  CHECK(log.find("task=" + std::to_string(a) + " from=issued to=complete device=1") !=
        std::string::npos);
}

TEST_CASE("policy swap requires an idle engine") {
  EngineFix f(1);
  f.kernels.register_uniform("noop", [](KernelContext&) {});
  TaskId t = f.engine->create_task("noop", {}, DeviceKind::gpu_sim);
  f.engine->submit(t);
  CHECK_THROWS_AS(f.engine->set_policy(std::make_unique<RoundRobinPolicy>()), Error);
  f.engine->drain();
  f.engine->set_policy(std::make_unique<RoundRobinPolicy>());
  CHECK(std::string(f.engine->policy().name()) == "round-robin");
}

namespace {

/// One fuzz op: which kernel, which objects in which arg slots.
struct FuzzOp {
  int kind = 0;  // 0 fill, 1 add, 2 xor_into, 3 copy_into, 4 blend
  std::vector<size_t> objs;
};

/// Applies an op to plain host buffers, the sequential-order reference.
void apply_serial(const FuzzOp& op, std::vector<std::vector<uint8_t>>& bufs) {
  switch (op.kind) {
    case 0:
      for (size_t i = 0; i < bufs[op.objs[0]].size(); ++i)
        bufs[op.objs[0]][i] = uint8_t(33 + i * 11);
      break;
    case 1:
      for (auto& b : bufs[op.objs[0]]) b = uint8_t(b + 29);
      break;
    case 2: {
      auto& src = bufs[op.objs[0]];
      auto& dst = bufs[op.objs[1]];
      for (size_t i = 0; i < dst.size(); ++i) dst[i] = uint8_t(dst[i] ^ src[i]);
      break;
    }
    case 3: {
      auto& src = bufs[op.objs[0]];
      auto& dst = bufs[op.objs[1]];
      for (size_t i = 0; i < dst.size(); ++i) dst[i] = src[i];
      break;
    }
    case 4: {
      auto& a = bufs[op.objs[0]];
      auto& b = bufs[op.objs[1]];
      auto& out = bufs[op.objs[2]];
      for (size_t i = 0; i < out.size(); ++i) out[i] = uint8_t(a[i] + b[i]);
      break;
    }
  }
}

void register_fuzz_kernels(KernelRegistry& reg) {
  reg.register_uniform("fz_fill", [](KernelContext& ctx) {
    auto a = ctx.arg_as<uint8_t>(0);
    for (size_t i = 0; i < a.size(); ++i) a[i] = uint8_t(33 + i * 11);
  });
  reg.register_uniform("fz_add", [](KernelContext& ctx) {
    for (auto& b : ctx.arg_as<uint8_t>(0)) b = uint8_t(b + 29);
  });
  reg.register_uniform("fz_xor", [](KernelContext& ctx) {
    auto src = ctx.arg_as<uint8_t>(0);
    auto dst = ctx.arg_as<uint8_t>(1);
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = uint8_t(dst[i] ^ src[i]);
  });
  reg.register_uniform("fz_copy", [](KernelContext& ctx) {
    auto src = ctx.arg_as<uint8_t>(0);
    auto dst = ctx.arg_as<uint8_t>(1);
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = src[i];
  });
  reg.register_uniform("fz_blend", [](KernelContext& ctx) {
    auto a = ctx.arg_as<uint8_t>(0);
    auto b = ctx.arg_as<uint8_t>(1);
    auto out = ctx.arg_as<uint8_t>(2);
    for (size_t i = 0; i < out.size(); ++i) out[i] = uint8_t(a[i] + b[i]);
  });
}

TaskId submit_fuzz_op(Engine& eng, const FuzzOp& op, const std::vector<ObjectId>& ids) {
  switch (op.kind) {
    case 0:
      return eng.create_task("fz_fill", {{ids[op.objs[0]], AccessMode::write}},
                             DeviceKind::gpu_sim);
    case 1:
      return eng.create_task("fz_add", {{ids[op.objs[0]], AccessMode::readwrite}},
                             DeviceKind::gpu_sim);
    case 2:
      return eng.create_task(
          "fz_xor", {{ids[op.objs[0]], AccessMode::read}, {ids[op.objs[1]], AccessMode::readwrite}},
          DeviceKind::gpu_sim);
    case 3:
      return eng.create_task(
          "fz_copy", {{ids[op.objs[0]], AccessMode::read}, {ids[op.objs[1]], AccessMode::write}},
          DeviceKind::gpu_sim);
    default:
      return eng.create_task("fz_blend",
                             {{ids[op.objs[0]], AccessMode::read},
                              {ids[op.objs[1]], AccessMode::read},
                              {ids[op.objs[2]], AccessMode::write}},
                             DeviceKind::gpu_sim);
  }
}

}  // namespace

TEST_CASE("random task programs match sequential replay byte for byte") {
  std::mt19937 rng(424242);
  for (int round = 0; round < 30; ++round) {
    bool rr = round % 2 == 1;
    EngineFix f(1 + int(rng() % 3), det_config(), 8 * kMiB,
                rr ? std::unique_ptr<SchedulerPolicy>(std::make_unique<RoundRobinPolicy>())
                   : nullptr);
    register_fuzz_kernels(f.kernels);

    const size_t n_objects = 6;
    const uint64_t size = 128 + (rng() % 4) * 64;
    std::vector<ObjectId> ids;
    std::vector<std::vector<uint8_t>> ref;
    for (size_t i = 0; i < n_objects; ++i) {
      ids.push_back(f.object(size, uint8_t(i * 5)));
      ref.push_back(host_pattern(size, uint8_t(i * 5)));
    }

    int n_ops = 10 + int(rng() % 31);
    std::vector<TaskId> batch;
    for (int i = 0; i < n_ops; ++i) {
      FuzzOp op;
      op.kind = int(rng() % 5);
      int needed = op.kind >= 4 ? 3 : (op.kind >= 2 ? 2 : 1);
      for (int a = 0; a < needed; ++a) op.objs.push_back(rng() % n_objects);
      apply_serial(op, ref);
      batch.push_back(submit_fuzz_op(*f.engine, op, ids));
      // mix one-by-one and batched submission
      if (rng() % 3 == 0) {
        f.engine->submit(batch);
        batch.clear();
      }
    }
    if (!batch.empty()) f.engine->submit(batch);
    f.engine->drain();

    for (size_t i = 0; i < n_objects; ++i) {
      auto got = f.read_back(ids[i]);
      REQUIRE(got == ref[i]);
    }
  }
}
