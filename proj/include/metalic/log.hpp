#pragma once

#include <iostream>
#include <sstream>
#include <string_view>

namespace metalic::log {

enum class Level { quiet = 0, info = 1, debug = 2 };

Level level();
void set_level(Level level);

void write(Level at, std::string_view message);

template <class... Args>
void info(const Args&... args) {
  if (level() < Level::info) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::info, os.str());
}

template <class... Args>
void debug(const Args&... args) {
  if (level() < Level::debug) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::debug, os.str());
}

}  // namespace metalic::log
