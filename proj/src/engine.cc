#include "amph/engine.hpp"

#include <algorithm>
#include <functional>
#include <ostream>
#include <sstream>

namespace amph {

namespace {
constexpr int kIdleLimit = 1 << 20;  // zero-progress steps before a wait gives up

void erase_value(std::vector<TaskId>& v, TaskId t) {
  v.erase(std::remove(v.begin(), v.end(), t), v.end());
}
}  // namespace

const char* task_state_name(TaskState s) {
  switch (s) {
    case TaskState::created: return "created";
    case TaskState::submitted: return "submitted";
    case TaskState::blocked: return "blocked";
    case TaskState::runnable: return "runnable";
    case TaskState::issued: return "issued";
    case TaskState::complete: return "complete";
    case TaskState::failed: return "failed";
  }
  return "?";
}

Engine::Engine(ObjectStore& store, KernelRegistry& kernels, std::unique_ptr<SchedulerPolicy> policy,
               const RuntimeConfig& cfg)
    : store_(store), mgr_(store.devices()), kernels_(kernels), cfg_(cfg),
      policy_(std::move(policy)) {
  if (!policy_) fail(ErrorCode::invalid_argument, "engine needs a scheduler policy");
  outstanding_.assign(static_cast<size_t>(mgr_.device_count()), 0);
  queue_rotation_.assign(static_cast<size_t>(mgr_.device_count()), 0);
}

Engine::~Engine() = default;

Engine::Rec& Engine::rec(TaskId t) {
  auto it = recs_.find(t);
  if (it == recs_.end()) fail(ErrorCode::not_found, "no task " + std::to_string(t));
  return *it->second;
}

const Engine::Rec& Engine::rec(TaskId t) const { return const_cast<Engine*>(this)->rec(t); }

void Engine::check_not_in_kernel() const {
  if (DeviceManager::in_kernel())
    fail(ErrorCode::reentrant_call, "kernel implementations must not call engine entry points");
}

TaskId Engine::create_task(const std::string& kernel, std::vector<TaskArg> args,
                           DeviceKind device_pref, uint64_t global_size, int processing_elements,
                           uint64_t scratch_bytes) {
  check_not_in_kernel();
  uint32_t kid = kernels_.id_of(kernel);
  if (!kernels_.supports(kid, device_pref))
    fail(ErrorCode::unsupported_device,
         "kernel '" + kernel + "' has no " + std::string(device_kind_name(device_pref)) +
             " implementation");
  if (mgr_.devices_of_kind(device_pref).empty())
    fail(ErrorCode::invalid_argument,
         "no " + std::string(device_kind_name(device_pref)) + " device registered");

  std::lock_guard<std::mutex> g(mu_);
  auto r = std::make_unique<Rec>();
  r->kernel_id = kid;
  r->kernel_name = kernel;
  r->pref = device_pref;
  r->global_size = global_size;
  r->processing_elements = processing_elements;
  r->scratch = scratch_bytes;
  for (const TaskArg& a : args) {
    r->arg_bytes += store_.size_of(a.object);  // also validates liveness
    auto it = std::find_if(r->unique_args.begin(), r->unique_args.end(),
                           [&](const TaskArg& u) { return u.object == a.object; });
    if (it == r->unique_args.end()) {
      r->unique_args.push_back(a);
    } else {
      it->mode = access_merge(it->mode, a.mode);
    }
  }
  r->args = std::move(args);
  r->id = next_id_++;
  TaskId id = r->id;
  recs_[id] = std::move(r);
  stats_.created++;
  return id;
}

void Engine::add_dependency(TaskId task, TaskId prerequisite) {
  check_not_in_kernel();
  std::lock_guard<std::mutex> g(mu_);
  Rec& t = rec(task);
  Rec& p = rec(prerequisite);
  if (t.state != TaskState::created || p.state != TaskState::created)
    fail(ErrorCode::invalid_state, "dependencies may only be added before submission");
  if (std::find(t.explicit_deps.begin(), t.explicit_deps.end(), prerequisite) ==
      t.explicit_deps.end())
    t.explicit_deps.push_back(prerequisite);
}

void Engine::detect_cycles_locked(const std::vector<TaskId>& batch) const {
  // explicit edges only; implicit edges always point at earlier submissions
  std::map<TaskId, int> mark;  // 0 unseen, 1 on stack, 2 done
  std::vector<TaskId> stack;
  std::function<void(TaskId)> visit = [&](TaskId id) {
    auto it = recs_.find(id);
    if (it == recs_.end() || task_terminal(it->second->state)) return;
    int& m = mark[id];
    if (m == 2) return;
    if (m == 1) {
      std::ostringstream os;
      auto from = std::find(stack.begin(), stack.end(), id);
      for (auto s = from; s != stack.end(); ++s) os << *s << " -> ";
      os << id;
      fail(ErrorCode::cycle_detected, "dependency cycle: " + os.str());
    }
    m = 1;
    stack.push_back(id);
    for (TaskId d : it->second->explicit_deps) visit(d);
    stack.pop_back();
    m = 2;
  };
  for (TaskId id : batch) visit(id);
}

void Engine::submit(TaskId task) { submit(std::vector<TaskId>{task}); }

void Engine::submit(const std::vector<TaskId>& tasks) {
  check_not_in_kernel();
  std::lock_guard<std::mutex> g(mu_);
  for (TaskId id : tasks) {
    if (rec(id).state != TaskState::created)
      fail(ErrorCode::invalid_state, "task " + std::to_string(id) + " was already submitted");
  }
  detect_cycles_locked(tasks);
  for (TaskId id : tasks) {
    Rec& t = rec(id);
    transition_locked(t, TaskState::submitted);
    requests_.push_back(id);
    active_++;
    stats_.submitted++;
    register_accesses_locked(t);
  }
}

void Engine::register_accesses_locked(Rec& t) {
  size_t done = 0;
  try {
    for (const TaskArg& a : t.unique_args) {
      auto conflicts = store_.register_task(a.object, t.id, a.mode);
      done++;
      for (TaskId p : conflicts) {
        if (recs_.count(p)) {
          if (std::find(t.inferred_preds.begin(), t.inferred_preds.end(), p) ==
              t.inferred_preds.end())
            t.inferred_preds.push_back(p);
        } else {
          t.ext_holds.emplace_back(a.object, p);
        }
      }
    }
    t.registered = true;
  } catch (const Error& e) {
    for (size_t i = 0; i < done; i++) store_.task_retired(t.unique_args[i].object, t.id);
    fail_locked(t, t.id, e.what());
  }
}

void Engine::transition_locked(Rec& t, TaskState to) {
  if (trace_) {
    *trace_ << "step=" << stats_.steps << " task=" << t.id << " from=" << task_state_name(t.state)
            << " to=" << task_state_name(to) << " device=";
    if (t.device >= 0) {
      *trace_ << t.device;
    } else {
      *trace_ << "-";
    }
    *trace_ << "\n";
  }
  t.state = to;
}

bool Engine::holds_block_locked(Rec& t) {
  for (const TaskArg& a : t.unique_args) {
    if (store_.pin_blocks_task(a.object, a.mode)) return true;
  }
  auto& holds = t.ext_holds;
  holds.erase(std::remove_if(holds.begin(), holds.end(),
                             [&](const auto& h) { return !store_.task_pending(h.first, h.second); }),
              holds.end());
  return !holds.empty();
}

void Engine::push_to_policy_locked(Rec& t) {
  transition_locked(t, TaskState::runnable);
  policy_->push(SchedTask{t.id, t.kernel_id, t.pref, t.arg_bytes});
}

void Engine::make_runnable_locked(Rec& t) {
  if (holds_block_locked(t)) {
    if (t.state == TaskState::submitted) transition_locked(t, TaskState::blocked);
    pin_wait_.push_back(t.id);
    return;
  }
  push_to_policy_locked(t);
}

void Engine::drain_requests_locked() {
  std::vector<TaskId> batch;
  batch.swap(requests_);
  for (TaskId id : batch) {
    Rec& t = rec(id);
    if (task_terminal(t.state)) continue;  // registration failed at submit
    std::vector<TaskId> preds;
    auto add_pred = [&](TaskId p) {
      auto it = recs_.find(p);
      if (it == recs_.end() || it->second->state == TaskState::complete) return;
      if (std::find(preds.begin(), preds.end(), p) == preds.end()) preds.push_back(p);
    };
    for (TaskId p : t.inferred_preds) add_pred(p);
    for (TaskId p : t.explicit_deps) add_pred(p);

    TaskId failed_pred = 0;
    for (TaskId p : preds) {
      if (rec(p).state == TaskState::failed) failed_pred = p;
    }
    if (failed_pred) {
      fail_locked(t, rec(failed_pred).failure_root,
                  "prerequisite task " + std::to_string(failed_pred) + " failed");
      continue;
    }
    for (TaskId p : preds) {
      rec(p).dependents.push_back(id);
      t.unmet++;
    }
    stats_.dependency_edges += preds.size();
    if (t.unmet > 0) {
      transition_locked(t, TaskState::blocked);
    } else {
      make_runnable_locked(t);
    }
  }
}

void Engine::recheck_pins_locked() {
  std::vector<TaskId> still;
  std::vector<TaskId> waiting;
  waiting.swap(pin_wait_);
  for (TaskId id : waiting) {
    Rec& t = rec(id);
    if (task_terminal(t.state)) continue;
    if (holds_block_locked(t)) {
      still.push_back(id);
    } else {
      push_to_policy_locked(t);
    }
  }
  pin_wait_.insert(pin_wait_.end(), still.begin(), still.end());
}

SchedulerContext Engine::context_locked() const {
  SchedulerContext ctx;
  for (DeviceId d = 0; d < mgr_.device_count(); ++d) {
    const DeviceDescriptor& desc = mgr_.descriptor(d);
    DeviceLoad l;
    l.device = d;
    l.kind = desc.kind;
    l.outstanding = outstanding_[static_cast<size_t>(d)];
    l.inflight_cap = cfg_.inflight_cap_multiplier * desc.num_compute_queues;
    ctx.loads.push_back(l);
  }
  return ctx;
}

bool Engine::pop_and_issue_locked() {
  bool moved = false;
  while (auto pick = policy_->pop(context_locked())) {
    Rec& t = rec(pick->task);
    if (mgr_.descriptor(pick->device).kind != t.pref)
      fail(ErrorCode::invalid_state, "policy picked a device of the wrong kind");
    t.device = pick->device;
    transition_locked(t, TaskState::issued);
    outstanding_[static_cast<size_t>(pick->device)]++;
    stats_.issued++;
    try {
      for (const TaskArg& a : t.unique_args) {
        t.tickets.push_back(store_.ensure_resident(a.object, t.device, a.mode));
      }
      issued_.push_back(t.id);
    } catch (const Error& e) {
      fail_locked(t, t.id, e.what());
    }
    moved = true;
  }
  return moved;
}

bool Engine::launch_ready_locked() {
  bool moved = false;
  for (size_t i = 0; i < issued_.size();) {
    Rec& t = rec(issued_[i]);
    bool advance_past = false;
    bool all_done = true;
    for (const TicketPtr& tk : t.tickets) {
      if (tk->failed()) {
        fail_locked(t, t.id, "argument transfer failed: " + tk->diagnostic());
        advance_past = true;
        all_done = false;
        break;
      }
      if (!tk->done()) all_done = false;
    }
    if (!advance_past && all_done) {
      try {
        // mutation becomes visible in the copy table only now, with every
        // inbound argument transfer already landed
        for (const TaskArg& a : t.unique_args) {
          if (access_writes(a.mode)) store_.apply_write_invalidate(a.object, t.device);
        }
        KernelLaunch launch;
        launch.fn = kernels_.lookup(t.kernel_id, mgr_.descriptor(t.device).kind);
        for (const TaskArg& a : t.args) {
          launch.args.push_back(store_.ensure_copy_allocated(a.object, t.device));
        }
        launch.global_size = t.global_size;
        launch.processing_elements = t.processing_elements > 0
                                         ? t.processing_elements
                                         : mgr_.descriptor(t.device).processing_elements;
        launch.scratch_bytes = t.scratch;
        int nq = mgr_.descriptor(t.device).num_compute_queues;
        int qi = queue_rotation_[static_cast<size_t>(t.device)]++ % nq;
        t.kernel_ev = mgr_.enqueue_kernel(t.device, std::move(launch),
                                          mgr_.compute_queue(t.device, qi));
        t.launched = true;
        running_.push_back(t.id);
      } catch (const Error& e) {
        fail_locked(t, t.id, e.what());
      }
      advance_past = true;
      moved = true;
    }
    if (advance_past) {
      issued_.erase(issued_.begin() + static_cast<long>(i));
    } else {
      ++i;
    }
  }
  return moved;
}

bool Engine::retire_locked() {
  bool moved = false;
  for (size_t i = 0; i < running_.size();) {
    Rec& t = rec(running_[i]);
    EventStatus st = mgr_.poll_event(t.kernel_ev);
    if (st == EventStatus::pending) {
      ++i;
      continue;
    }
    running_.erase(running_.begin() + static_cast<long>(i));
    if (st == EventStatus::complete) {
      finish_locked(t);
    } else {
      fail_locked(t, t.id, "kernel failed: " + mgr_.event_info(t.kernel_ev).diagnostic);
    }
    moved = true;
  }
  return moved;
}

void Engine::finish_locked(Rec& t) {
  transition_locked(t, TaskState::complete);
  outstanding_[static_cast<size_t>(t.device)]--;
  active_--;
  stats_.completed++;
  for (const TaskArg& a : t.unique_args) store_.task_retired(a.object, t.id);
  for (TaskId d : t.dependents) {
    Rec& dep = rec(d);
    dep.unmet--;
    if (dep.state == TaskState::blocked && dep.unmet == 0) make_runnable_locked(dep);
  }
}

void Engine::fail_locked(Rec& t, TaskId root, const std::string& diag) {
  if (task_terminal(t.state)) return;
  bool counted = t.state == TaskState::issued;
  transition_locked(t, TaskState::failed);
  t.failure_root = root;
  t.diag = diag;
  if (counted) outstanding_[static_cast<size_t>(t.device)]--;
  active_--;  // every failing task was submitted
  stats_.failed++;
  if (t.registered) {
    for (const TaskArg& a : t.unique_args) store_.task_retired(a.object, t.id);
  }
  erase_value(pin_wait_, t.id);
  erase_value(issued_, t.id);
  erase_value(running_, t.id);
  for (TaskId d : t.dependents) {
    Rec& dep = rec(d);
    if (!task_terminal(dep.state))
      fail_locked(dep, root, "prerequisite task " + std::to_string(t.id) + " failed");
  }
}

bool Engine::step() {
  check_not_in_kernel();
  std::lock_guard<std::mutex> g(mu_);
  stats_.steps++;
  bool moved = !requests_.empty();
  drain_requests_locked();
  recheck_pins_locked();
  moved |= pop_and_issue_locked();
  moved |= store_.advance();
  moved |= launch_ready_locked();
  moved |= mgr_.pump();
  moved |= store_.advance();
  moved |= launch_ready_locked();
  moved |= retire_locked();
  return moved;
}

void Engine::drain() {
  check_not_in_kernel();
  int idle = 0;
  while (incomplete() > 0) {
    if (step()) {
      idle = 0;
    } else if (++idle > kIdleLimit) {
      fail(ErrorCode::invalid_state, "engine stalled with incomplete tasks");
    }
  }
}

bool Engine::test_complete(TaskId t) const {
  std::lock_guard<std::mutex> g(mu_);
  return task_terminal(rec(t).state);
}

void Engine::wait(TaskId id) {
  check_not_in_kernel();
  int idle = 0;
  while (true) {
    {
      std::lock_guard<std::mutex> g(mu_);
      const Rec& t = rec(id);
      if (t.state == TaskState::complete) return;
      if (t.state == TaskState::failed)
        fail(ErrorCode::task_failed, "task " + std::to_string(id) + " failed (root cause task " +
                                         std::to_string(t.failure_root) + "): " + t.diag);
    }
    if (step()) {
      idle = 0;
    } else if (++idle > kIdleLimit) {
      fail(ErrorCode::invalid_state, "wait stalled: task " + std::to_string(id) +
                                         " cannot progress (pinned object or missing submit?)");
    }
  }
}

TaskState Engine::state(TaskId t) const {
  std::lock_guard<std::mutex> g(mu_);
  return rec(t).state;
}

TaskStatus Engine::status(TaskId id) const {
  std::lock_guard<std::mutex> g(mu_);
  const Rec& t = rec(id);
  TaskStatus s;
  s.id = t.id;
  s.state = t.state;
  s.device = t.device;
  s.failure_root = t.failure_root;
  s.diagnostic = t.diag;
  return s;
}

size_t Engine::incomplete() const {
  std::lock_guard<std::mutex> g(mu_);
  return active_;
}

EngineStats Engine::stats() const {
  std::lock_guard<std::mutex> g(mu_);
  return stats_;
}

void Engine::set_policy(std::unique_ptr<SchedulerPolicy> policy) {
  check_not_in_kernel();
  if (!policy) fail(ErrorCode::invalid_argument, "engine needs a scheduler policy");
  std::lock_guard<std::mutex> g(mu_);
  if (active_ > 0) fail(ErrorCode::invalid_state, "cannot swap policies while tasks are in flight");
  policy_ = std::move(policy);
}

SchedulerPolicy& Engine::policy() {
  std::lock_guard<std::mutex> g(mu_);
  return *policy_;
}

void Engine::set_trace(std::ostream* os) {
  std::lock_guard<std::mutex> g(mu_);
  trace_ = os;
  if (trace_) *trace_ << "# engine trace policy=" << policy_->name() << "\n";
}

}  // namespace amph
