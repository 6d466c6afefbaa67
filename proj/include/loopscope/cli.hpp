#pragma once

#include <string>
#include <vector>

namespace loopscope {

// Entry point shared by the binary and the tests. args excludes argv[0].
// Exit codes: 0 ok, 1 runtime/input error (machine-readable JSON record on
// stderr), 2 usage error.
int dispatch(const std::vector<std::string>& args);

}  // namespace loopscope
