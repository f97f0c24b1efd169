#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bpeimg::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2 };

// `args` excludes the program name. Machine-readable output for `--out -`
// goes to `out`, diagnostics and usage text to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

} // namespace bpeimg::cli
