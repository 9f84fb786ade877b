#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace chaintree {

struct GradcheckCase {
  std::string name;           // e.g. "encoder#17 d=8 heads=2 layers=2 sup+unsup"
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst;          // parameter coordinate with the largest error
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double max_rel_error = 0.0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from dominating through round-off.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradcheckOptions {
  std::size_t configs = 100;  // per model family
  std::uint64_t seed = 0;
  double step = 1e-4;
  std::ostream* log = nullptr;
};

/// Five-point central finite differences against the analytic gradient, in double
/// precision, over every parameter of randomly configured encoders (with
/// dropout, all embedding ablations, both losses and reductions), encoders
/// fed constant layer-norm inputs, GCNs in every direction and readout, and
/// the two losses on their own.
GradcheckReport run_gradcheck(const GradcheckOptions& opts = {});

}  // namespace chaintree
