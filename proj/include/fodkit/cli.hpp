#pragma once

namespace fodkit {

/// Command-line entry point. Returns the process exit code: 0 on success,
/// 2 on usage errors, 1 on any other failure (with a JSON error on stderr).
int run_cli(int argc, char** argv);

}  // namespace fodkit
