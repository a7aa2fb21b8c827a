#include "bench.hpp"

#include <cstdio>
#include <ostream>

#include "amph/socket_transport.hpp"

namespace amph::bench {

void apply_opt(BenchOptions& o, const std::string& name, bool on) {
  if (name == "staging-pool") {
    o.rt.use_staging_pool = on;
  } else if (name == "device-pools") {
    o.rt.use_device_pools = on;
  } else if (name == "request-pools") {
    o.rt.use_request_pools = on;
  } else if (name == "multi-queue") {
    o.rt.use_multi_queue = on;
  } else if (name == "receive-cache") {
    o.comm.use_receive_cache = on;
  } else if (name == "object-pool") {
    o.comm.use_object_pool = on;
  } else if (name == "inline") {
    o.comm.use_inline_messages = on;
  } else if (name == "copy-to-inline") {
    o.comm.use_copy_to_inline = on;
  } else if (name == "direct") {
    o.direct = on;
  } else {
    fail(ErrorCode::config_error, "unknown optimization toggle: " + name);
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_report(std::ostream& os, const CsvTable& t, const std::string& format) {
  if (format == "csv") {
    for (size_t i = 0; i < t.header.size(); i++) os << (i ? "," : "") << t.header[i];
    os << "\n";
    for (const auto& row : t.rows) {
      for (size_t i = 0; i < row.size(); i++) os << (i ? "," : "") << row[i];
      os << "\n";
    }
    return;
  }
  if (format != "table") fail(ErrorCode::config_error, "unknown report format: " + format);
  std::vector<size_t> widths(t.header.size());
  for (size_t i = 0; i < t.header.size(); i++) widths[i] = t.header[i].size();
  for (const auto& row : t.rows) {
    for (size_t i = 0; i < row.size(); i++) widths[i] = std::max(widths[i], row[i].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); i++) {
      os << (i ? "  " : "") << cells[i] << std::string(widths[i] - cells[i].size(), ' ');
    }
    os << "\n";
  };
  line(t.header);
  for (const auto& row : t.rows) line(row);
}

RankGroup::RankGroup(const BenchOptions& o, Rank ranks) {
  RuntimeConfig rcfg = o.rt;
  rcfg.deterministic = o.deterministic;
  for (Rank r = 0; r < ranks; r++) {
    rts_.push_back(std::make_unique<Runtime>(rcfg, Runtime::simple_topology(1)));
  }
  if (o.transport == "socket") {
    auto mesh = SocketTransport::local_mesh(ranks);
    for (Rank r = 0; r < ranks; r++) {
      comms_.push_back(std::make_unique<Communicator>(*rts_[r], std::move(mesh[r]), o.comm));
    }
    return;
  }
  if (o.transport != "loopback")
    fail(ErrorCode::config_error, "unknown transport: " + o.transport);
  auto fabric = std::make_shared<LoopbackFabric>(ranks);
  for (Rank r = 0; r < ranks; r++) {
    comms_.push_back(std::make_unique<Communicator>(*rts_[r], fabric->endpoint(r), o.comm));
  }
}

bool RankGroup::pump() {
  bool moved = false;
  for (auto& c : comms_) moved |= c->progress();
  for (auto& r : rts_) moved |= r->pump();
  return moved;
}

void RankGroup::run_until(const std::function<bool()>& done) {
  uint64_t idle = 0;
  while (!done()) {
    if (pump()) {
      idle = 0;
    } else if (++idle > (1u << 22)) {
      fail(ErrorCode::invalid_state, "benchmark stalled: no rank is making progress");
    }
  }
}

void RankGroup::dump_stats(std::ostream& os, const std::string& label) {
  for (Rank r = 0; r < size(); r++) {
    os << "# " << label << " rank " << r << " runtime stats\n";
    rt(r).dump_stats(os);
  }
}

}  // namespace amph::bench
