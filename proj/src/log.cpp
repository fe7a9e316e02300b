#include "xbt/log.hpp"

#include <iostream>
#include <mutex>

namespace xbt {
namespace {

std::mutex sink_mutex;

WarningSink& current_sink() {
  static WarningSink sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return sink;
}

}  // namespace

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(sink_mutex);
  auto previous = std::move(current_sink());
  current_sink() = std::move(sink);
  return previous;
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex);
  if (current_sink()) current_sink()(message);
}

}  // namespace xbt
