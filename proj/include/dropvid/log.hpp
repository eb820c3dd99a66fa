#pragma once

#include <string>

namespace dropvid {

void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void set_log_quiet(bool quiet);
// Number of warnings emitted so far (quiet or not).
long warning_count();

}  // namespace dropvid
