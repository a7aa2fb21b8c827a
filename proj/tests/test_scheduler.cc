#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <random>

#include "amph/scheduler.hpp"

using namespace amph;

namespace {

SchedulerContext make_ctx(std::vector<DeviceLoad> loads) {
  SchedulerContext ctx;
  ctx.loads = std::move(loads);
  return ctx;
}

SchedTask gpu_task(TaskId id) { return SchedTask{id, 0, DeviceKind::gpu_sim, 0}; }

}  // namespace

TEST_CASE("fifo policy pops in push order onto the only device") {
  FifoLeastLoadedPolicy p;
  CHECK(std::string(p.name()) == "fifo-least-loaded");
  for (TaskId t : {1, 2, 3}) p.push(gpu_task(t));
  CHECK(p.queued() == 3);
  auto ctx = make_ctx({{1, DeviceKind::gpu_sim, 0, 4}});
  for (TaskId want : {1, 2, 3}) {
    auto pick = p.pop(ctx);
    REQUIRE(pick.has_value());
    CHECK(pick->task == want);
    CHECK(pick->device == 1);
  }
  CHECK_FALSE(p.pop(ctx).has_value());
  CHECK(p.queued() == 0);
}

TEST_CASE("least-loaded selection alternates between equal devices") {
  FifoLeastLoadedPolicy p;
  for (TaskId t : {1, 2, 3, 4}) p.push(gpu_task(t));
  std::map<DeviceId, int> outstanding{{1, 0}, {2, 0}};
  std::vector<DeviceId> picks;
  while (true) {
    auto ctx = make_ctx({{1, DeviceKind::gpu_sim, outstanding[1], 8},
                         {2, DeviceKind::gpu_sim, outstanding[2], 8}});
    auto pick = p.pop(ctx);
    if (!pick) break;
    picks.push_back(pick->device);
    outstanding[pick->device]++;
  }
  CHECK(picks == std::vector<DeviceId>{1, 2, 1, 2});
}

TEST_CASE("least-loaded matches a reference simulation on random load patterns") {
  std::mt19937 rng(77);
  for (int round = 0; round < 200; ++round) {
    FifoLeastLoadedPolicy p;
    int n = 1 + int(rng() % 6);
    for (int i = 0; i < n; ++i) p.push(gpu_task(TaskId(i + 1)));

    std::vector<DeviceLoad> loads;
    int devs = 1 + int(rng() % 4);
    for (int d = 0; d < devs; ++d)
      loads.push_back({DeviceId(d + 1), DeviceKind::gpu_sim, int(rng() % 5), 4});

    auto ctx = make_ctx(loads);
    auto pick = p.pop(ctx);

    // reference: first task wins; device = least outstanding unsaturated,
    // lowest id on ties
    std::optional<DeviceId> want;
    int best = 0;
    for (const auto& l : loads) {
      if (l.outstanding >= l.inflight_cap) continue;
      if (!want || l.outstanding < best) {
        want = l.device;
        best = l.outstanding;
      }
    }
    if (!want) {
      CHECK_FALSE(pick.has_value());
    } else {
      REQUIRE(pick.has_value());
      CHECK(pick->task == 1);
      CHECK(pick->device == *want);
    }
  }
}

TEST_CASE("saturated devices withhold tasks but later eligible tasks still pop") {
  FifoLeastLoadedPolicy p;
  p.push(SchedTask{1, 0, DeviceKind::gpu_sim, 0});
  p.push(SchedTask{2, 0, DeviceKind::cpu_sim, 0});
  auto ctx = make_ctx({{1, DeviceKind::gpu_sim, 4, 4},   // full
                       {2, DeviceKind::cpu_sim, 0, 4}});
  auto pick = p.pop(ctx);
  REQUIRE(pick.has_value());
  CHECK(pick->task == 2);
  CHECK(pick->device == 2);
  CHECK_FALSE(p.pop(ctx).has_value());  // task 1 still withheld
  CHECK(p.queued() == 1);

  auto freed = make_ctx({{1, DeviceKind::gpu_sim, 3, 4}, {2, DeviceKind::cpu_sim, 0, 4}});
  auto pick2 = p.pop(freed);
  REQUIRE(pick2.has_value());
  CHECK(pick2->task == 1);
}

TEST_CASE("round-robin rotates across matching devices") {
  RoundRobinPolicy p;
  CHECK(std::string(p.name()) == "round-robin");
  for (TaskId t : {1, 2, 3, 4, 5, 6}) p.push(gpu_task(t));
  auto ctx = make_ctx({{1, DeviceKind::gpu_sim, 0, 8},
                       {2, DeviceKind::gpu_sim, 0, 8},
                       {3, DeviceKind::gpu_sim, 0, 8}});
  std::vector<DeviceId> picks;
  while (auto pick = p.pop(ctx)) picks.push_back(pick->device);
  CHECK(picks == std::vector<DeviceId>{1, 2, 3, 1, 2, 3});
}

TEST_CASE("policies conserve tasks under interleaved push and pop") {
  FifoLeastLoadedPolicy p;
  std::mt19937 rng(5);
  std::vector<TaskId> pushed, popped;
  TaskId next = 1;
  auto ctx = make_ctx({{1, DeviceKind::gpu_sim, 0, 1 << 20}});
  for (int i = 0; i < 2000; ++i) {
    if (rng() % 2 == 0) {
      pushed.push_back(next);
      p.push(gpu_task(next++));
    } else if (auto pick = p.pop(ctx)) {
      popped.push_back(pick->task);
    }
  }
  while (auto pick = p.pop(ctx)) popped.push_back(pick->task);
  CHECK(popped == pushed);  // FIFO with one device preserves order exactly
}

TEST_CASE("policy factory builds bundled policies by name") {
  CHECK(std::string(make_policy("fifo-least-loaded")->name()) == "fifo-least-loaded");
  CHECK(std::string(make_policy("round-robin")->name()) == "round-robin");
  CHECK_THROWS_AS((void)make_policy("clairvoyant"), Error);
}
