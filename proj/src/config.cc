#include "amph/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <istream>

#include "amph/status.hpp"

namespace amph {

void RuntimeConfig::apply_env() {
  if (const char* mode = std::getenv("AMPH_PROGRESS_MODE")) {
    std::string m(mode);
    if (m == "shared") {
      progress_mode = ProgressMode::shared;
    } else if (m == "dedicated") {
      progress_mode = ProgressMode::dedicated;
    } else {
      fail(ErrorCode::config_error, "AMPH_PROGRESS_MODE must be 'shared' or 'dedicated', got '" + m + "'");
    }
  }
}

static std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::config_error, "expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(ErrorCode::config_error, "empty key in '" + line + "'");
    out[key] = value;
  }
  return out;
}

bool parse_bool(const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), ::tolower);
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  fail(ErrorCode::config_error, "not a boolean: '" + v + "'");
}

uint64_t parse_byte_count(const std::string& v) {
  if (v.empty()) fail(ErrorCode::config_error, "empty byte count");
  size_t pos = 0;
  unsigned long long base = 0;
  try {
    base = std::stoull(v, &pos);
  } catch (const std::exception&) {
    fail(ErrorCode::config_error, "not a byte count: '" + v + "'");
  }
  std::string suffix = trim(v.substr(pos));
  std::transform(suffix.begin(), suffix.end(), suffix.begin(), ::tolower);
  uint64_t mult = 1;
  if (suffix.empty() || suffix == "b") {
    mult = 1;
  } else if (suffix == "k" || suffix == "kb" || suffix == "kib") {
    mult = kKiB;
  } else if (suffix == "m" || suffix == "mb" || suffix == "mib") {
    mult = kMiB;
  } else if (suffix == "g" || suffix == "gb" || suffix == "gib") {
    mult = kGiB;
  } else {
    fail(ErrorCode::config_error, "unknown byte suffix: '" + suffix + "'");
  }
  return base * mult;
}

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::invalid_state: return "invalid state";
    case ErrorCode::not_found: return "not found";
    case ErrorCode::duplicate_id: return "duplicate id";
    case ErrorCode::out_of_device_memory: return "out of device memory";
    case ErrorCode::pool_exhausted: return "pool exhausted";
    case ErrorCode::double_free: return "double free";
    case ErrorCode::cycle_detected: return "cycle detected";
    case ErrorCode::reentrant_call: return "reentrant call";
    case ErrorCode::uninitialized_read: return "uninitialized read";
    case ErrorCode::size_mismatch: return "size mismatch";
    case ErrorCode::destroyed: return "destroyed";
    case ErrorCode::unknown_kernel: return "unknown kernel";
    case ErrorCode::unknown_handler: return "unknown handler";
    case ErrorCode::unsupported_device: return "unsupported device";
    case ErrorCode::task_failed: return "task failed";
    case ErrorCode::protocol_error: return "protocol error";
    case ErrorCode::config_error: return "config error";
    case ErrorCode::io_error: return "io error";
  }
  return "unknown";
}

}  // namespace amph
