#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "chaintree/losses.hpp"

namespace chaintree {
namespace {

constexpr double kNormFloor = 1e-12;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

template <typename T>
SupervisedLoss<T> sup_loss(ConstMatrixView<T> logits, std::span<const int> labels) {
  const std::size_t B = logits.rows, C = logits.cols;
  if (labels.size() != B) throw std::invalid_argument("sup_loss: label count mismatch");
  if (B == 0) throw std::invalid_argument("sup_loss: empty batch");
  SupervisedLoss<T> out;
  out.dlogits.resize(B, C);
  double total = 0.0;
  std::vector<double> p(C);
  for (std::size_t i = 0; i < B; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::invalid_argument("sup_loss: label " + std::to_string(y) + " out of range");
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits(i, c)));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      p[c] = std::exp(static_cast<double>(logits(i, c)) - mx);
      z += p[c];
    }
    total += -(static_cast<double>(logits(i, static_cast<std::size_t>(y))) - mx - std::log(z));
    for (std::size_t c = 0; c < C; ++c) {
      const double g = p[c] / z - (c == static_cast<std::size_t>(y) ? 1.0 : 0.0);
      out.dlogits(i, c) = static_cast<T>(g / static_cast<double>(B));
    }
  }
  out.loss = total / static_cast<double>(B);
  return out;
}

template <typename T>
InfoNce<T>::InfoNce(double tau, PairReduction reduction) : tau_(tau), reduction_(reduction) {
  if (!(tau > 0.0)) throw std::invalid_argument("InfoNCE: tau must be > 0");
}

template <typename T>
ContrastiveLoss<T> InfoNce<T>::evaluate(const ContrastiveBatch<T>& batch) const {
  const std::size_t B = batch.roots.rows(), d = batch.roots.cols();
  if (B < 2) throw std::invalid_argument("unsup_loss: batch needs at least 2 trees for negatives");
  if (batch.heads.size() != B) throw std::invalid_argument("unsup_loss: heads/roots size mismatch");

  // Work in double on unit vectors; cos(u, r) = u_hat . r_hat.
  std::vector<std::vector<double>> root_hat(B, std::vector<double>(d));
  std::vector<double> root_norm(B);
  for (std::size_t j = 0; j < B; ++j) {
    double n = 0.0;
    for (std::size_t k = 0; k < d; ++k) n += static_cast<double>(batch.roots(j, k)) * batch.roots(j, k);
    root_norm[j] = std::max(std::sqrt(n), kNormFloor);
    for (std::size_t k = 0; k < d; ++k) root_hat[j][k] = batch.roots(j, k) / root_norm[j];
  }

  ContrastiveLoss<T> out;
  out.d_heads.resize(B);
  for (const auto& h : batch.heads) out.pairs += h.rows();
  if (out.pairs == 0) throw std::invalid_argument("unsup_loss: no tree in the batch has a chain");

  const double weight = reduction_ == PairReduction::MeanOverPairs
                            ? 1.0 / static_cast<double>(out.pairs)
                            : 1.0 / static_cast<double>(B);

  // Gradients w.r.t. the unit vectors, mapped back through normalization below.
  std::vector<std::vector<double>> g_root_hat(B, std::vector<double>(d, 0.0));
  std::vector<double> u_hat(d), g_u_hat(d), sims(B), prob(B);
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const auto& heads = batch.heads[i];
    if (heads.cols() != d && heads.rows() > 0) throw std::invalid_argument("unsup_loss: head dimension");
    out.d_heads[i].resize(heads.rows(), d);
    for (std::size_t n = 0; n < heads.rows(); ++n) {
      double un = 0.0;
      for (std::size_t k = 0; k < d; ++k) un += static_cast<double>(heads(n, k)) * heads(n, k);
      un = std::max(std::sqrt(un), kNormFloor);
      for (std::size_t k = 0; k < d; ++k) u_hat[k] = heads(n, k) / un;

      double mx = -INFINITY;
      for (std::size_t j = 0; j < B; ++j) {
        sims[j] = dot(u_hat, root_hat[j]) / tau_;
        mx = std::max(mx, sims[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < B; ++j) {
        prob[j] = std::exp(sims[j] - mx);
        z += prob[j];
      }
      for (double& p : prob) p /= z;
      total += -(sims[i] - mx - std::log(z));

      // dL/dsim_j = weight * (p_j - [j == i]); sim_j = u_hat . r_hat_j / tau
      std::fill(g_u_hat.begin(), g_u_hat.end(), 0.0);
      for (std::size_t j = 0; j < B; ++j) {
        const double g = weight * (prob[j] - (j == i ? 1.0 : 0.0)) / tau_;
        for (std::size_t k = 0; k < d; ++k) {
          g_u_hat[k] += g * root_hat[j][k];
          g_root_hat[j][k] += g * u_hat[k];
        }
      }
      // d u_hat / d u = (I - u_hat u_hat^T) / |u|
      const double proj = dot(g_u_hat, u_hat);
      for (std::size_t k = 0; k < d; ++k)
        out.d_heads[i](n, k) = static_cast<T>((g_u_hat[k] - proj * u_hat[k]) / un);
    }
  }

  out.d_roots.resize(B, d);
  for (std::size_t j = 0; j < B; ++j) {
    const double proj = dot(g_root_hat[j], root_hat[j]);
    for (std::size_t k = 0; k < d; ++k)
      out.d_roots(j, k) = static_cast<T>((g_root_hat[j][k] - proj * root_hat[j][k]) / root_norm[j]);
  }
  out.loss = total * weight;
  return out;
}

template <typename T>
ContrastiveLoss<T> unsup_loss(const ContrastiveBatch<T>& batch, double tau, PairReduction reduction) {
  return InfoNce<T>(tau, reduction).evaluate(batch);
}

template SupervisedLoss<float> sup_loss(ConstMatrixView<float>, std::span<const int>);
template SupervisedLoss<double> sup_loss(ConstMatrixView<double>, std::span<const int>);
template class InfoNce<float>;
template class InfoNce<double>;
template ContrastiveLoss<float> unsup_loss(const ContrastiveBatch<float>&, double, PairReduction);
template ContrastiveLoss<double> unsup_loss(const ContrastiveBatch<double>&, double, PairReduction);

}  // namespace chaintree
