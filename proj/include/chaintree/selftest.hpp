#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace chaintree {

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast oracle and property checks over the whole library; a smoke-level
/// subset of the unit and acceptance suites that ships with the binary.
std::vector<SelftestResult> run_selftest(std::uint64_t seed = 0);

}  // namespace chaintree
