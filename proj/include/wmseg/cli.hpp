#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "wmseg/postprocess.hpp"

namespace wmseg::cli {

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2, kFormatError = 3 };

/// Parses and runs one command line (program name excluded). Diagnostics
/// go to err, progress and reports to out. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Thread count for OpenMP and Eigen (0 keeps the default), denormal
/// flushing on every worker, and allocator settings that keep large
/// buffers mapped between training steps.
void configure_runtime(int threads);

/// `key = value` lines; `#` starts a comment. Throws ConfigError on a line
/// without '=' or with an empty key.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// `tract_name value` lines; `#` starts a comment. A `default value` line
/// sets the threshold for unlisted tracts.
postprocess::ThresholdTable read_threshold_file(const std::filesystem::path& path);

}  // namespace wmseg::cli
