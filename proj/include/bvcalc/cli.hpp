#pragma once

#include <string>
#include <vector>

namespace bvc {

inline constexpr const char* kCliVersion = "0.1.0";

// Batch front end: parses a subcommand plus flags (without the program name),
// loads the JSON run configuration, executes, and writes one JSON object per
// result line to --out (default stdout). Returns the process exit code:
// 0 success, 2 configuration error, 3 integrity or numeric failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace bvc
