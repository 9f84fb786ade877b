#include <doctest.h>

#include <omp.h>

#include "chaintree/kernels.hpp"
#include "chaintree/rng.hpp"

using namespace chaintree;

namespace {

template <typename T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<T> m(r, c);
  for (auto& x : m.storage()) x = static_cast<T>(rng.normal());
  return m;
}

CsrMatrix<double> random_csr(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  CsrMatrix<double> a;
  a.rows = rows;
  a.cols = cols;
  a.row_ptr.push_back(0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c)
      if (rng.uniform() < 0.1) {
        a.col_idx.push_back(c);
        a.values.push_back(rng.normal());
      }
    a.row_ptr.push_back(a.col_idx.size());
  }
  return a;
}

// Naive triple loops as the oracle.
Matrix<double> matmul(const Matrix<double>& a, const Matrix<double>& b, bool ta, bool tb) {
  const std::size_t n = ta ? a.cols() : a.rows(), k = ta ? a.rows() : a.cols(), m = tb ? b.rows() : b.cols();
  Matrix<double> c(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += (ta ? a(p, i) : a(i, p)) * (tb ? b(j, p) : b(p, j));
      c(i, j) = s;
    }
  return c;
}

void check_close(const Matrix<double>& a, const Matrix<double>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

}  // namespace

TEST_CASE("kernels agree with naive loops on odd shapes") {
  for (auto [n, k, m] : {std::tuple{1, 1, 1}, {3, 5, 7}, {9, 4, 2}, {17, 13, 11}, {2, 8, 3}}) {
    const auto un = static_cast<std::size_t>(n), uk = static_cast<std::size_t>(k), um = static_cast<std::size_t>(m);
    const auto a = random_matrix<double>(un, uk, 1), b = random_matrix<double>(uk, um, 2);
    const auto bt = random_matrix<double>(um, uk, 3), at = random_matrix<double>(uk, un, 4);
    Matrix<double> c(un, um);
    kernels::serial::gemm_nn<double>(a, b, c);
    check_close(c, matmul(a, b, false, false));
    kernels::serial::gemm_nt<double>(a, bt, c);
    check_close(c, matmul(a, bt, false, true));
    kernels::serial::gemm_tn<double>(at, b, c);
    check_close(c, matmul(at, b, true, false));
    // accumulate adds to what is there
    Matrix<double> acc(un, um, 1.0);
    kernels::serial::gemm_nn<double>(a, b, acc, true);
    auto want = matmul(a, b, false, false);
    for (auto& x : want.storage()) x += 1.0;
    check_close(acc, want);
  }
}

TEST_CASE("sparse-dense product agrees with the dense form") {
  const auto a = random_csr(23, 19, 5);
  const auto x = random_matrix<double>(19, 6, 6);
  Matrix<double> dense(23, 19);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t p = a.row_ptr[r]; p < a.row_ptr[r + 1]; ++p) dense(r, a.col_idx[p]) = a.values[p];
  Matrix<double> y(23, 6);
  kernels::serial::spmm<double>(a, x, y);
  check_close(y, matmul(dense, x, false, false));
  const auto at = transpose(a);
  Matrix<double> yt(19, 6);
  const auto x2 = random_matrix<double>(23, 6, 7);
  kernels::serial::spmm<double>(at, x2, yt);
  check_close(yt, matmul(dense, x2, true, false));
}

TEST_CASE("parallel kernels are bit-identical to serial with four threads") {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
  const auto a = random_matrix<float>(300, 130, 1), b = random_matrix<float>(130, 140, 2);
  const auto bt = random_matrix<float>(140, 130, 3), c2 = random_matrix<float>(300, 140, 4);
  Matrix<float> s(300, 140), p(300, 140);
  kernels::serial::gemm_nn<float>(a, b, s);
  kernels::parallel::gemm_nn<float>(a, b, p);
  CHECK(s == p);
  kernels::serial::gemm_nt<float>(a, bt, s);
  kernels::parallel::gemm_nt<float>(a, bt, p);
  CHECK(s == p);
  Matrix<float> s3(130, 140), p3(130, 140);
  kernels::serial::gemm_tn<float>(a, c2, s3);
  kernels::parallel::gemm_tn<float>(a, c2, p3);
  CHECK(s3 == p3);
  const auto sp = random_csr(2000, 2000, 9);
  const auto x = random_matrix<double>(2000, 64, 10);
  Matrix<double> ys(2000, 64), yp(2000, 64);
  kernels::serial::spmm<double>(sp, x, ys);
  kernels::parallel::spmm<double>(sp, x, yp);
  CHECK(ys == yp);
  omp_set_num_threads(saved);
}

TEST_CASE("shape mismatches are rejected") {
  Matrix<double> a(2, 3), b(4, 2), c(2, 2);
  CHECK_THROWS_AS(kernels::serial::gemm_nn<double>(a, b, c), std::invalid_argument);
  CHECK_THROWS_AS(kernels::parallel::gemm_nt<double>(a, b, c), std::invalid_argument);
}
