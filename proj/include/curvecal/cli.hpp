#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace curvecal {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;  // bad flags, bad config, rejected data
inline constexpr int kExitGate = 3;   // an R^2 gate did not pass

/// Entry point of the `curvecal` tool. argv[0] is ignored.
int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace curvecal
