#include <chrono>
#include <cstring>
#include <iostream>

#include "bench.hpp"

namespace amph::bench {

namespace {

/// Deterministic matrix entries; cheap enough to regenerate anywhere.
double matrix_entry(uint64_t seed, uint64_t index) {
  uint64_t h = (seed * 0x9E3779B97F4A7C15ull + index) * 0xBF58476D1CE4E5B9ull;
  return double((h >> 40) % 2000) / 1000.0 - 1.0;
}

void fill_matrix(Runtime& rt, ObjectId obj, uint64_t seed) {
  auto acc = rt.objects().acquire_host(obj, AccessMode::write);
  auto& view = acc.wait();
  auto* d = reinterpret_cast<double*>(view.bytes.data());
  size_t count = view.bytes.size() / sizeof(double);
  for (size_t i = 0; i < count; i++) d[i] = matrix_entry(seed, i);
  acc.release();
}

struct AllocCounters {
  uint64_t pool_fallbacks = 0;
  uint64_t host_allocs = 0;
  uint64_t device_allocs = 0;
};

AllocCounters snapshot(Runtime& rt) {
  AllocCounters c;
  auto& store = rt.objects();
  auto& mgr = rt.devices();
  c.pool_fallbacks = store.host_pool_stats().fallback_allocs;
  for (DeviceId d = 0; d < DeviceId(mgr.device_count()); d++) {
    if (d != kHostDevice) c.pool_fallbacks += store.device_pool_stats(d).fallback_allocs;
    auto raw = mgr.stats(d).alloc_raw_calls;
    if (d == kHostDevice) {
      c.host_allocs += raw;
    } else {
      c.device_allocs += raw;
    }
  }
  return c;
}

}  // namespace

MatmulResult run_matmul(const BenchOptions& o) {
  MatmulResult result;
  for (uint64_t n : o.sizes) {
    RuntimeConfig rcfg = o.rt;
    rcfg.deterministic = o.deterministic;
    Runtime rt(rcfg, Runtime::simple_topology(1));
    rt.kernels().register_uniform("matmul", [](KernelContext& k) {
      auto a = k.arg_as<const double>(0);
      auto b = k.arg_as<const double>(1);
      auto c = k.arg_as<double>(2);
      size_t n = size_t(k.global_size());
      for (size_t i = 0; i < n; i++) {
        for (size_t j = 0; j < n; j++) {
          double sum = 0.0;
          for (size_t l = 0; l < n; l++) sum += a[i * n + l] * b[l * n + j];
          c[i * n + j] = sum;
        }
      }
    });

    MatmulSizeResult row;
    row.n = n;
    uint64_t bytes = n * n * sizeof(double);
    double total_seconds = 0;
    AllocCounters warm_base;
    for (int iter = 0; iter < o.iters; iter++) {
      if (iter == 1) warm_base = snapshot(rt);
      auto t0 = std::chrono::steady_clock::now();
      ObjectId a = rt.objects().create(bytes);
      ObjectId b = rt.objects().create(bytes);
      ObjectId c = rt.objects().create(bytes);
      fill_matrix(rt, a, uint64_t(iter) * 2 + 1);
      fill_matrix(rt, b, uint64_t(iter) * 2 + 2);
      TaskId t = rt.engine().create_task(
          "matmul", {{a, AccessMode::read}, {b, AccessMode::read}, {c, AccessMode::write}},
          DeviceKind::gpu_sim, n);
      rt.engine().submit(t);
      rt.engine().wait(t);
      rt.objects().destroy(a);
      rt.objects().destroy(b);
      rt.objects().destroy(c);
      total_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    if (o.iters > 1) {
      AllocCounters end = snapshot(rt);
      row.warm_iters = o.iters - 1;
      row.warm_pool_fallbacks = end.pool_fallbacks - warm_base.pool_fallbacks;
      row.warm_host_allocs = end.host_allocs - warm_base.host_allocs;
      row.warm_device_allocs = end.device_allocs - warm_base.device_allocs;
    }
    if (!o.deterministic) {
      row.mean_seconds = total_seconds / o.iters;
      row.gflops = 2.0 * double(n) * double(n) * double(n) / row.mean_seconds / 1e9;
    }
    result.sizes.push_back(row);
    if (o.dump_stats) {
      std::cerr << "# matmul n=" << n << " runtime stats\n";
      rt.dump_stats(std::cerr);
    }
  }
  return result;
}

CsvTable MatmulResult::csv(const BenchOptions& o) const {
  CsvTable t;
  t.header = {"benchmark", "variant", "size", "iters", "mean_ms", "gflops",
              "warm_pool_fallbacks", "warm_host_allocs", "warm_device_allocs"};
  for (const auto& r : sizes) {
    t.rows.push_back({"matmul", o.variant(), std::to_string(r.n), std::to_string(o.iters),
                      format_double(r.mean_seconds * 1e3), format_double(r.gflops),
                      std::to_string(r.warm_pool_fallbacks), std::to_string(r.warm_host_allocs),
                      std::to_string(r.warm_device_allocs)});
  }
  return t;
}

}  // namespace amph::bench
