#pragma once

#include <string>
#include <vector>

namespace stemgan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Full command line without the program name, e.g.
// {"train", "--config", "run.yaml", "--train.max_epochs=10"}.
int run(const std::vector<std::string>& args);

}  // namespace stemgan::cli
