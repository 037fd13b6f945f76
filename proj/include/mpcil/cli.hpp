#ifndef MPCIL_CLI_HPP_
#define MPCIL_CLI_HPP_

namespace mpcil {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 ok, 1 usage, 2 runtime failure, 3 failed grad-check.
int CliMain(int argc, char** argv);

}  // namespace mpcil

#endif  // MPCIL_CLI_HPP_
