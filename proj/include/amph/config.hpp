#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

namespace amph {

inline constexpr uint64_t kKiB = 1024ull;
inline constexpr uint64_t kMiB = 1024ull * 1024ull;
inline constexpr uint64_t kGiB = 1024ull * 1024ull * 1024ull;

enum class ProgressMode : uint8_t {
  shared,     ///< progress driven by whichever thread pumps/waits
  dedicated,  ///< one agent thread per device plus an engine agent
};

/// Runtime-wide knobs. Every optimization is independently switchable so the
/// benchmarks can run ablations; defaults are the fully optimized configuration.
struct RuntimeConfig {
  bool deterministic = false;  ///< single shared agent, zero simulated delay, trace on
  ProgressMode progress_mode = ProgressMode::shared;

  bool use_staging_pool = true;
  bool use_device_pools = true;
  bool use_request_pools = true;
  bool use_multi_queue = true;

  uint64_t staging_pool_bytes = 64 * kMiB;
  double device_pool_fraction = 0.9;
  int default_compute_queues = 4;
  uint64_t scratch_limit = 48 * kKiB;

  std::string scheduler_policy = "fifo-least-loaded";
  int inflight_cap_multiplier = 2;

  bool trace = false;  ///< forced on by deterministic

  /// Applies AMPH_PROGRESS_MODE=shared|dedicated when set in the environment.
  void apply_env();
};

/// Substrate-side knobs, mirroring the runtime ablation style.
struct CommConfig {
  bool direct_device = false;  ///< direct-to-device transfers instead of host staging
  bool use_inline_messages = true;
  bool use_receive_cache = true;
  bool use_object_pool = true;
  bool use_copy_to_inline = true;  ///< copy device data straight into the message frame
  uint64_t object_pool_capacity = 64;
  uint64_t receive_cache_bytes_per_device = 32 * kMiB;
};

/// Flat key/value config file: one `key = value` per line, '#' comments.
std::map<std::string, std::string> parse_key_values(std::istream& in);

bool parse_bool(const std::string& v);
uint64_t parse_byte_count(const std::string& v);  // accepts plain numbers and K/M/G suffixes

}  // namespace amph
