#pragma once

#include <iosfwd>
#include <string_view>
#include <string>
#include <vector>

namespace ipgo::cli {

// Runs the ipgo command line. `args` excludes the program name. Normal
// output goes to `out`; failures produce one JSON line on `err` of the form
// {"error":{"code":...,"message":...,"command":...}}.
// Exit codes: 0 success, 1 runtime failure or failed check, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// JSON error record without the trailing newline.
std::string error_record(std::string_view code, std::string_view message, std::string_view command);

}  // namespace ipgo::cli
