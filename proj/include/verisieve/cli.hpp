#ifndef VERISIEVE_CLI_HPP
#define VERISIEVE_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace verisieve {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one CLI invocation. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace verisieve

#endif  // VERISIEVE_CLI_HPP
