#pragma once

#include <iosfwd>

namespace scot {

/// Entry point of the `scot` binary. Returns the process exit code: 0 on
/// success, 2 for configuration errors, 3 for data errors and 4 for numeric
/// failures. Errors are reported on `err` as a single line
///   error: kind=<Kind> code=<n> message=<text>
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace scot
