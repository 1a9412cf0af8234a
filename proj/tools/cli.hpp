#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lacer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIncomplete = 3;

/// Runs `lacer <args...>` in-process. `args` excludes the program name.
int main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace lacer::cli
