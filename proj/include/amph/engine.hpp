#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "amph/kernel.hpp"
#include "amph/object.hpp"
#include "amph/scheduler.hpp"
#include "amph/task.hpp"

namespace amph {

/// Drives hetero_tasks from creation to retirement: infers dependencies from
/// argument access modes, routes runnable tasks through the scheduler policy,
/// issues the transfers that stage arguments, launches kernels once staging
/// completes, and retires finished tasks to unblock their dependents.
///
/// All entry points are thread safe and may be called from any application
/// thread, but never from inside a kernel implementation.
class Engine {
 public:
  Engine(ObjectStore& store, KernelRegistry& kernels, std::unique_ptr<SchedulerPolicy> policy,
         const RuntimeConfig& cfg);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Builds a task in the created state. Duplicate objects across args
  /// collapse to one access of the merged mode for dependency purposes;
  /// the kernel still sees every arg slot. Fails fast when the kernel has no
  /// implementation for the preferred device kind or no such device exists.
  TaskId create_task(const std::string& kernel, std::vector<TaskArg> args, DeviceKind device_pref,
                     uint64_t global_size = 1, int processing_elements = 0,
                     uint64_t scratch_bytes = 0);

  /// Records an explicit prerequisite edge. Both tasks must still be in the
  /// created state. Cycles are rejected at submit time.
  void add_dependency(TaskId task, TaskId prerequisite);

  /// Appends created tasks to the request list in argument order and returns
  /// immediately; the next step() drains them. Submission order is program
  /// order for dependency inference.
  void submit(const std::vector<TaskId>& tasks);
  void submit(TaskId task);

  /// One bounded pass: drain requests, rescan pin-stalled tasks, pop and
  /// issue, advance transfers, launch staged kernels, pump devices, retire.
  /// Returns whether anything moved.
  bool step();

  /// Steps until every submitted task is terminal.
  void drain();

  bool test_complete(TaskId t) const;  ///< true once terminal; never advances
  /// Drives progress until the task is terminal; throws Error(task_failed)
  /// naming the root-cause task when it (or a prerequisite) failed.
  void wait(TaskId t);

  TaskState state(TaskId t) const;
  TaskStatus status(TaskId t) const;
  size_t incomplete() const;  ///< submitted-but-not-terminal tasks
  EngineStats stats() const;

  /// Swaps the scheduling policy; requires an idle engine.
  void set_policy(std::unique_ptr<SchedulerPolicy> policy);
  SchedulerPolicy& policy();

  /// Streams one line per task state transition; pass nullptr to stop.
  void set_trace(std::ostream* os);

 private:
  struct Rec {
    TaskId id = 0;
    uint32_t kernel_id = 0;
    std::string kernel_name;
    std::vector<TaskArg> args;  // kernel-facing, original order and duplicates
    std::vector<TaskArg> unique_args;  // dependency-facing, merged modes
    DeviceKind pref = DeviceKind::gpu_sim;
    uint64_t global_size = 1;
    int processing_elements = 0;
    uint64_t scratch = 0;
    std::vector<TaskId> explicit_deps;
    std::vector<TaskId> inferred_preds;  // conflicting earlier tasks, captured at submit
    /// Conflicting accesses registered by components outside the engine
    /// (an in-flight message send reading an argument, for instance); the
    /// task stays held until the store reports them gone.
    std::vector<std::pair<ObjectId, TaskId>> ext_holds;
    TaskState state = TaskState::created;
    int unmet = 0;
    std::vector<TaskId> dependents;
    bool registered = false;  // args recorded in the object store
    DeviceId device = -1;
    std::vector<TicketPtr> tickets;
    EventId kernel_ev;
    bool launched = false;
    TaskId failure_root = 0;
    std::string diag;
    uint64_t arg_bytes = 0;
  };

  Rec& rec(TaskId t);
  const Rec& rec(TaskId t) const;
  void check_not_in_kernel() const;
  /// Records the task's accesses in the object store so later work (tasks or
  /// sends) observes it immediately; failures fail the task in place.
  void register_accesses_locked(Rec& t);
  void drain_requests_locked();
  void recheck_pins_locked();
  bool pop_and_issue_locked();
  bool launch_ready_locked();
  bool retire_locked();
  void make_runnable_locked(Rec& t);
  bool holds_block_locked(Rec& t);  // host pins or external accesses; prunes resolved holds
  void push_to_policy_locked(Rec& t);
  void finish_locked(Rec& t);
  void fail_locked(Rec& t, TaskId root, const std::string& diag);
  void transition_locked(Rec& t, TaskState to);
  SchedulerContext context_locked() const;
  void detect_cycles_locked(const std::vector<TaskId>& batch) const;

  ObjectStore& store_;
  DeviceManager& mgr_;
  KernelRegistry& kernels_;
  RuntimeConfig cfg_;
  mutable std::mutex mu_;
  std::unique_ptr<SchedulerPolicy> policy_;
  std::map<TaskId, std::unique_ptr<Rec>> recs_;
  TaskId next_id_ = 1;
  std::vector<TaskId> requests_;
  std::vector<TaskId> pin_wait_;
  std::vector<TaskId> issued_;   // staging transfers, not yet launched
  std::vector<TaskId> running_;  // kernel enqueued
  std::vector<int> outstanding_;  // issued-not-retired per device
  std::vector<int> queue_rotation_;  // next compute queue per device
  size_t active_ = 0;
  EngineStats stats_;
  std::ostream* trace_ = nullptr;
};

}  // namespace amph
