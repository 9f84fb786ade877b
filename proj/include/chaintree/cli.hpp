#pragma once

namespace chaintree {

/// Entry point of the `chaintree` tool. Returns the process exit status:
/// 0 success, 1 runtime failure, 2 usage or configuration error. Errors are
/// reported as one JSON line on stderr: {"error":"<kind>","message":"..."}.
int run_cli(int argc, char** argv);

}  // namespace chaintree
