#pragma once

// The convexcert command-line tool as a callable library, so tests can run
// commands in-process.
//
// Exit codes: 0 success or certified, 1 check failure, 2 input error,
// 3 circle detected.

#include <ostream>
#include <string>
#include <vector>

#include "convexcert/functions.hpp"

namespace convexcert::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kInputError = 2, kCircle = 3 };

struct Context {
  const FunctionLibrary* lib = &FunctionLibrary::builtin();
  /// Value of CONVEXCERT_OUT; empty when unset.
  std::string env_out;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

/// Runs one invocation; `args` excludes the program name.
int run(const std::vector<std::string>& args, const Context& ctx);

/// Entry point used by main: reads CONVEXCERT_OUT and writes to stdout/stderr.
int main(int argc, char** argv);

}  // namespace convexcert::cli
