#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace chaintree {

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction, no weight decay.
template <typename T>
class Adam {
 public:
  Adam(std::size_t n, AdamOptions opts) : opts_(opts), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<T>& params, const std::vector<T>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("Adam: buffer size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]);
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] = static_cast<T>(static_cast<double>(params[i]) -
                                 opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
    }
  }

  std::size_t steps() const { return t_; }
  const AdamOptions& options() const { return opts_; }

 private:
  AdamOptions opts_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace chaintree
