#include <cctype>
#include <cmath>
#include <string>

#include "chaintree/rng.hpp"
#include "chaintree/tree.hpp"

namespace chaintree {

std::vector<double> featurize(std::string_view text, std::size_t d) {
  if (d == 0) throw std::invalid_argument("featurize: dimension must be > 0");
  std::vector<double> v(d, 0.0);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    const std::uint64_t h = fnv1a64(token);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[static_cast<std::size_t>(h % d)] += sign;
    token.clear();
  };
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) flush();
    else token.push_back(static_cast<char>(std::tolower(uc)));
  }
  flush();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

}  // namespace chaintree
