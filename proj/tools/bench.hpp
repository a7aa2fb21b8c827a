#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "amph/comm.hpp"

namespace amph::bench {

/// One benchmark invocation's knobs, assembled by the CLI or by tests.
/// Defaults match the fully optimized configuration.
struct BenchOptions {
  Rank ranks = 2;
  int chunks = 8;                ///< total chunk count for the over-decomposed runs
  std::vector<uint64_t> sizes;   ///< matrix dims, message bytes, or grid dims
  int iters = 100;
  bool direct = false;           ///< direct-to-device wire protocol instead of host staging
  bool deterministic = false;    ///< zero simulated delay; timing columns report 0
  bool audit = false;
  bool dump_stats = false;
  std::string transport = "loopback";  ///< "loopback" or "socket"
  RuntimeConfig rt;
  CommConfig comm;

  std::string variant() const { return direct ? "direct" : "staging"; }
};

/// Applies one `--opt name=on|off` toggle to the embedded configs.
/// Unknown names throw; valid names: staging-pool, device-pools,
/// request-pools, multi-queue, receive-cache, object-pool, inline,
/// copy-to-inline, direct.
void apply_opt(BenchOptions& o, const std::string& name, bool on);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// `format` is "csv" (one header row, comma separated) or "table" (aligned).
void write_report(std::ostream& os, const CsvTable& t, const std::string& format);

std::string format_double(double v);

/// In-process rank group over loopback channels or a local socket mesh,
/// pumped cooperatively by the driving thread.
class RankGroup {
 public:
  RankGroup(const BenchOptions& o, Rank ranks);

  Rank size() const { return Rank(rts_.size()); }
  Runtime& rt(Rank r) { return *rts_[r]; }
  Communicator& comm(Rank r) { return *comms_[r]; }

  bool pump();
  void run_until(const std::function<bool()>& done);
  /// Writes every rank's runtime statistics, for --stats runs.
  void dump_stats(std::ostream& os, const std::string& label);

 private:
  std::vector<std::unique_ptr<Runtime>> rts_;
  std::vector<std::unique_ptr<Communicator>> comms_;
};

// --- matmul ---

struct MatmulSizeResult {
  uint64_t n = 0;
  double mean_seconds = 0;
  double gflops = 0;
  int warm_iters = 0;             ///< iterations after the first
  uint64_t warm_pool_fallbacks = 0;  ///< pooled-allocator raw fallbacks in warm iterations
  uint64_t warm_host_allocs = 0;     ///< host alloc_raw calls in warm iterations
  uint64_t warm_device_allocs = 0;   ///< accelerator alloc_raw calls in warm iterations
};

struct MatmulResult {
  std::vector<MatmulSizeResult> sizes;
  CsvTable csv(const BenchOptions& o) const;
};

/// Per iteration: three fresh matrices, inputs pushed to the device, one
/// multiply kernel; results stay on the device. Sizes are matrix dims.
MatmulResult run_matmul(const BenchOptions& o);

// --- ping-pong ---

struct PingpongCell {
  std::string op;  ///< raw | object | put
  uint64_t bytes = 0;
  double mean_rtt_us = 0;
  double bandwidth_mib_s = 0;
  double frames_per_rt = 0;
  double staging_copies_per_rt = 0;
  bool verified = false;  ///< every echo byte-identical
};

struct PingpongResult {
  std::vector<PingpongCell> cells;
  CsvTable csv(const BenchOptions& o) const;
};

/// Two ranks echo payloads of each size under three operation flavors:
/// raw device buffers, hetero_object sends, and put through a global ref.
PingpongResult run_pingpong(const BenchOptions& o);

// --- Jacobi3D ---

struct JacobiResult {
  uint64_t grid = 0;
  int chunks = 0;
  Rank ranks = 0;
  int iters = 0;
  double mean_iter_seconds = 0;
  double final_residual = 0;  ///< squared norm of the last iteration's update
  double max_abs_diff = 0;    ///< vs the serial reference, when verified
  uint64_t halo_messages = 0;
  std::string verified = "no";  ///< yes | no | skipped (grid too large)
  std::vector<double> residuals;
  CsvTable csv(const BenchOptions& o) const;
};

/// 7-point Jacobi with Dirichlet boundaries on a grid³ domain, over-decomposed
/// into chunks wrapped in mobile objects that exchange halos by message.
/// `constant_grid` starts from the all-ones fixed point instead of the seeded
/// initial condition.
JacobiResult run_jacobi3d(const BenchOptions& o, uint64_t grid, bool constant_grid = false);

/// Initial condition and boundary value at global cell (x, y, z); the ring
/// just outside [0, grid) supplies the Dirichlet boundary.
double jacobi_seed_value(int64_t x, int64_t y, int64_t z);

/// Reference solver on one padded array; returns the grid³ interior after
/// `iters` sweeps. `value` supplies cells and ring, as jacobi_seed_value does.
std::vector<double> jacobi_serial(uint64_t grid, int iters,
                                  const std::function<double(int64_t, int64_t, int64_t)>& value);

}  // namespace amph::bench
