#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bench.hpp"

namespace {

void apply_opt_strings(amph::bench::BenchOptions& o, const std::vector<std::string>& opts) {
  for (const std::string& s : opts) {
    auto eq = s.find('=');
    std::string name = s.substr(0, eq);
    std::string val = eq == std::string::npos ? "" : s.substr(eq + 1);
    if (val != "on" && val != "off")
      amph::fail(amph::ErrorCode::config_error, "--opt expects name=on|off, got '" + s + "'");
    amph::bench::apply_opt(o, name, val == "on");
  }
}

}  // namespace

int main(int argc, char** argv) {
  using amph::bench::BenchOptions;
  CLI::App app{"benchmarks for the amph runtime: simulated accelerators, "
               "coherent data objects, and message-driven multi-rank runs"};
  app.require_subcommand(1);

  BenchOptions o;
  std::string mode = "staging";
  std::string format = "table";
  std::vector<std::string> opts;
  bool constant_grid = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--ranks", o.ranks, "in-process ranks")->check(CLI::PositiveNumber);
    cmd->add_option("--iters", o.iters, "iterations per size")->check(CLI::PositiveNumber);
    cmd->add_option("--sizes", o.sizes, "comma-separated sizes (per-benchmark meaning)")
        ->delimiter(',');
    cmd->add_option("--mode", mode, "wire protocol for object payloads")
        ->check(CLI::IsMember({"staging", "direct"}));
    cmd->add_option("--opt", opts,
                    "toggle one optimization, name=on|off; repeatable. Names: staging-pool, "
                    "device-pools, request-pools, multi-queue, receive-cache, object-pool, "
                    "inline, copy-to-inline, direct");
    cmd->add_option("--transport", o.transport, "message transport between ranks")
        ->check(CLI::IsMember({"loopback", "socket"}));
    cmd->add_option("--format", format, "report layout")->check(CLI::IsMember({"csv", "table"}));
    cmd->add_flag("--deterministic", o.deterministic,
                  "strip simulated delays; timing columns report 0");
    cmd->add_flag("--audit", o.audit, "run consistency checks during the benchmark");
    cmd->add_flag("--stats", o.dump_stats, "dump per-rank runtime statistics to stderr");
    return cmd;
  };

  auto* matmul =
      add_common(app.add_subcommand("matmul", "dense matrix multiply on a simulated accelerator; "
                                              "sizes are matrix dimensions"));
  auto* pingpong =
      add_common(app.add_subcommand("pingpong", "two-rank echo over raw buffers, object sends, "
                                                "and puts; sizes are payload bytes"));
  auto* jacobi =
      add_common(app.add_subcommand("jacobi3d", "over-decomposed 7-point stencil with halo "
                                                "exchange; sizes are grid dimensions"));
  jacobi->add_option("--chunks", o.chunks, "total chunk count across ranks")
      ->check(CLI::PositiveNumber);
  jacobi->add_flag("--constant-grid", constant_grid,
                   "start from the all-ones fixed point; every residual must be exactly 0");

  CLI11_PARSE(app, argc, argv);

  try {
    o.direct = mode == "direct";
    apply_opt_strings(o, opts);

    amph::bench::CsvTable report;
    if (matmul->parsed()) {
      if (o.sizes.empty()) o.sizes = {64, 128, 256};
      report = amph::bench::run_matmul(o).csv(o);
    } else if (pingpong->parsed()) {
      if (o.sizes.empty()) o.sizes = {8, 1024, 65536, 1048576, 4194304};
      report = amph::bench::run_pingpong(o).csv(o);
    } else {
      if (o.sizes.empty()) o.sizes = {32};
      for (uint64_t grid : o.sizes) {
        auto one = amph::bench::run_jacobi3d(o, grid, constant_grid).csv(o);
        if (report.header.empty()) report.header = one.header;
        report.rows.insert(report.rows.end(), one.rows.begin(), one.rows.end());
      }
    }
    amph::bench::write_report(std::cout, report, format);
  } catch (const amph::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
