#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace amph {

enum class ErrorCode : uint8_t {
  invalid_argument,
  invalid_state,
  not_found,
  duplicate_id,
  out_of_device_memory,
  pool_exhausted,
  double_free,
  cycle_detected,
  reentrant_call,
  uninitialized_read,
  size_mismatch,
  destroyed,
  unknown_kernel,
  unknown_handler,
  unsupported_device,
  task_failed,
  protocol_error,
  config_error,
  io_error,
};

const char* error_code_name(ErrorCode c);

/// Exception carrying a machine-checkable error code next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace amph
