#include "metalic/log.hpp"

#include <atomic>
#include <mutex>

namespace metalic::log {

namespace {
std::atomic<int> g_level{static_cast<int>(Level::info)};
std::mutex g_mutex;
}  // namespace

Level level() { return static_cast<Level>(g_level.load(std::memory_order_relaxed)); }

void set_level(Level value) { g_level.store(static_cast<int>(value), std::memory_order_relaxed); }

void write(Level at, std::string_view message) {
  std::lock_guard lock(g_mutex);
  std::cerr << (at == Level::debug ? "[debug] " : "[metalic] ") << message << '\n';
}

}  // namespace metalic::log
