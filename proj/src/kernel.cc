#include "amph/kernel.hpp"

namespace amph {

KernelId KernelRegistry::register_kernel(std::string name) {
  std::lock_guard<std::mutex> g(mu_);
  if (by_name_.count(name)) fail(ErrorCode::duplicate_id, "kernel '" + name + "' already registered");
  KernelId id = static_cast<KernelId>(entries_.size());
  by_name_[name] = id;
  entries_.push_back(Entry{std::move(name), {}});
  return id;
}

void KernelRegistry::add_impl(KernelId id, DeviceKind kind, KernelFn fn) {
  std::lock_guard<std::mutex> g(mu_);
  if (id >= entries_.size()) fail(ErrorCode::unknown_kernel, "no kernel with id " + std::to_string(id));
  if (!fn) fail(ErrorCode::invalid_argument, "empty kernel body");
  entries_[id].impls[kind] = std::move(fn);
}

KernelId KernelRegistry::register_uniform(std::string name, KernelFn fn) {
  KernelId id = register_kernel(std::move(name));
  add_impl(id, DeviceKind::host, fn);
  add_impl(id, DeviceKind::cpu_sim, fn);
  add_impl(id, DeviceKind::gpu_sim, std::move(fn));
  return id;
}

bool KernelRegistry::supports(KernelId id, DeviceKind kind) const {
  std::lock_guard<std::mutex> g(mu_);
  return id < entries_.size() && entries_[id].impls.count(kind) > 0;
}

const KernelFn* KernelRegistry::lookup(KernelId id, DeviceKind kind) const {
  std::lock_guard<std::mutex> g(mu_);
  if (id >= entries_.size()) fail(ErrorCode::unknown_kernel, "no kernel with id " + std::to_string(id));
  auto it = entries_[id].impls.find(kind);
  if (it == entries_[id].impls.end())
    fail(ErrorCode::unsupported_device,
         "kernel '" + entries_[id].name + "' has no " + device_kind_name(kind) + " implementation");
  return &it->second;
}

const std::string& KernelRegistry::name(KernelId id) const {
  std::lock_guard<std::mutex> g(mu_);
  if (id >= entries_.size()) fail(ErrorCode::unknown_kernel, "no kernel with id " + std::to_string(id));
  return entries_[id].name;
}

KernelId KernelRegistry::id_of(const std::string& name) const {
  std::lock_guard<std::mutex> g(mu_);
  auto it = by_name_.find(name);
  if (it == by_name_.end()) fail(ErrorCode::unknown_kernel, "no kernel named '" + name + "'");
  return it->second;
}

size_t KernelRegistry::size() const {
  std::lock_guard<std::mutex> g(mu_);
  return entries_.size();
}

}  // namespace amph
