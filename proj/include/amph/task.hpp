#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amph/device.hpp"
#include "amph/object.hpp"

namespace amph {

/// Lifecycle of a hetero_task. States advance monotonically:
/// created -> submitted -> (blocked ->) runnable -> issued -> complete/failed.
enum class TaskState : uint8_t {
  created,    ///< built, dependencies may still be added
  submitted,  ///< on the engine's request list
  blocked,    ///< waiting on incomplete prerequisite tasks
  runnable,   ///< handed to the scheduler policy
  issued,     ///< transfers staging or kernel enqueued on the chosen device
  complete,
  failed,
};

const char* task_state_name(TaskState s);
inline bool task_terminal(TaskState s) {
  return s == TaskState::complete || s == TaskState::failed;
}

struct TaskArg {
  ObjectId object = 0;
  AccessMode mode = AccessMode::read;
};

/// Snapshot of one task for callers; the engine owns the live record.
struct TaskStatus {
  TaskId id = 0;
  TaskState state = TaskState::created;
  DeviceId device = -1;        ///< chosen device once issued
  TaskId failure_root = 0;     ///< first failed task in the cause chain
  std::string diagnostic;      ///< nonempty once failed
};

struct EngineStats {
  uint64_t created = 0;
  uint64_t submitted = 0;
  uint64_t completed = 0;
  uint64_t failed = 0;
  uint64_t issued = 0;
  uint64_t dependency_edges = 0;  ///< implicit + explicit, deduplicated
  uint64_t steps = 0;
};

}  // namespace amph
