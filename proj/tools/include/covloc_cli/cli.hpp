#pragma once

#include <ostream>

namespace covloc::cli {

/// Entry point of `covloc-cli`. Returns 0 on success, 1 on configuration or
/// usage errors and 2 on numerical failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace covloc::cli
