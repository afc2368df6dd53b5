#pragma once

#include <string>
#include <vector>

namespace relnet {

/// Runs one `relnet` subcommand. Returns the process exit status; failures
/// print a single diagnostic line to stderr.
int cli_dispatch(int argc, const char* const* argv);

inline int cli_dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace relnet
