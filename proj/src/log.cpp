#include "dropvid/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace dropvid {

namespace {
std::atomic<bool> g_quiet{false};
std::atomic<long> g_warnings{0};
std::mutex g_mu;
}  // namespace

void log_warn(const std::string& msg) {
  ++g_warnings;
  if (g_quiet) return;
  std::lock_guard lock(g_mu);
  std::cerr << "warning: " << msg << '\n';
}

void log_info(const std::string& msg) {
  if (g_quiet) return;
  std::lock_guard lock(g_mu);
  std::cerr << msg << '\n';
}

void set_log_quiet(bool quiet) { g_quiet = quiet; }

long warning_count() { return g_warnings; }

}  // namespace dropvid
