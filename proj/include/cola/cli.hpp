#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace cola {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitUsage = 64;

// Entry point of the `cola` binary. argv[0] is the program name. Reports
// go to `out`, logs and usage text to `err`.
int run(int argc, const char* const* argv, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);
int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

}  // namespace cola
