#pragma once

#include <string>
#include <vector>

namespace heightformer {

// Entry point behind the heightformer binary. args excludes argv[0].
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
int run_command(const std::vector<std::string>& args);

}  // namespace heightformer
