#pragma once

// Dense and sparse products used by the encoder and the GCN baseline.
//
// Each product exists twice: kernels::serial (the reference loops) and
// kernels::parallel (OpenMP over output rows). Both call the same per-row
// routine, so every output element is accumulated in the same order and the
// two variants agree bit-for-bit regardless of thread count.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "chaintree/matrix.hpp"

namespace chaintree {

/// Compressed sparse row matrix.
template <typename T>
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;  // rows + 1
  std::vector<std::size_t> col_idx;
  std::vector<T> values;

  std::size_t nnz() const { return values.size(); }
};

template <typename T>
CsrMatrix<T> transpose(const CsrMatrix<T>& a) {
  CsrMatrix<T> t;
  t.rows = a.cols;
  t.cols = a.rows;
  t.row_ptr.assign(t.rows + 1, 0);
  for (std::size_t c : a.col_idx) ++t.row_ptr[c + 1];
  for (std::size_t r = 0; r < t.rows; ++r) t.row_ptr[r + 1] += t.row_ptr[r];
  t.col_idx.resize(a.nnz());
  t.values.resize(a.nnz());
  std::vector<std::size_t> next(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (std::size_t r = 0; r < a.rows; ++r) {
    for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
      const std::size_t dst = next[a.col_idx[k]]++;
      t.col_idx[dst] = r;
      t.values[dst] = a.values[k];
    }
  }
  return t;
}

namespace kernels {
namespace detail {

inline void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// C[i,:] (+)= A[i,:] * B
template <typename T>
inline void gemm_nn_row(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c,
                        std::size_t i, bool accumulate) {
  T* __restrict out = c.data + i * c.cols;
  if (!accumulate)
    for (std::size_t j = 0; j < c.cols; ++j) out[j] = T{0};
  const T* arow = a.data + i * a.cols;
  const std::size_t n = c.cols;
  std::size_t k = 0;
  for (; k + 4 <= a.cols; k += 4) {
    const T a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
    const T* b0 = b.data + k * n;
    const T* b1 = b0 + n;
    const T* b2 = b1 + n;
    const T* b3 = b2 + n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) out[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
  }
  for (; k < a.cols; ++k) {
    const T aik = arow[k];
    const T* brow = b.data + k * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
  }
}

// C[i,:] (+)= A[i,:] * B^T
template <typename T>
inline void gemm_nt_row(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c,
                        std::size_t i, bool accumulate) {
  T* __restrict out = c.data + i * c.cols;
  const T* arow = a.data + i * a.cols;
  const std::size_t n = a.cols;
  std::size_t j = 0;
  for (; j + 4 <= c.cols; j += 4) {
    const T* b0 = b.data + j * n;
    const T* b1 = b0 + n;
    const T* b2 = b1 + n;
    const T* b3 = b2 + n;
    T s0{0}, s1{0}, s2{0}, s3{0};
#pragma omp simd reduction(+ : s0, s1, s2, s3)
    for (std::size_t k = 0; k < n; ++k) {
      s0 += arow[k] * b0[k];
      s1 += arow[k] * b1[k];
      s2 += arow[k] * b2[k];
      s3 += arow[k] * b3[k];
    }
    out[j] = accumulate ? out[j] + s0 : s0;
    out[j + 1] = accumulate ? out[j + 1] + s1 : s1;
    out[j + 2] = accumulate ? out[j + 2] + s2 : s2;
    out[j + 3] = accumulate ? out[j + 3] + s3 : s3;
  }
  for (; j < c.cols; ++j) {
    const T* brow = b.data + j * n;
    T acc{0};
#pragma omp simd reduction(+ : acc)
    for (std::size_t k = 0; k < n; ++k) acc += arow[k] * brow[k];
    out[j] = accumulate ? out[j] + acc : acc;
  }
}

// C[i,:] (+)= (A^T)[i,:] * B = sum_k A[k,i] * B[k,:]
template <typename T>
inline void gemm_tn_row(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c,
                        std::size_t i, bool accumulate) {
  T* __restrict out = c.data + i * c.cols;
  if (!accumulate)
    for (std::size_t j = 0; j < c.cols; ++j) out[j] = T{0};
  const std::size_t n = c.cols;
  std::size_t k = 0;
  for (; k + 4 <= a.rows; k += 4) {
    const T a0 = a.data[k * a.cols + i], a1 = a.data[(k + 1) * a.cols + i];
    const T a2 = a.data[(k + 2) * a.cols + i], a3 = a.data[(k + 3) * a.cols + i];
    if (a0 == T{0} && a1 == T{0} && a2 == T{0} && a3 == T{0}) continue;
    const T* b0 = b.data + k * n;
    const T* b1 = b0 + n;
    const T* b2 = b1 + n;
    const T* b3 = b2 + n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) out[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
  }
  for (; k < a.rows; ++k) {
    const T aki = a.data[k * a.cols + i];
    if (aki == T{0}) continue;
    const T* brow = b.data + k * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) out[j] += aki * brow[j];
  }
}

template <typename T>
inline void spmm_row(const CsrMatrix<T>& a, ConstMatrixView<T> x, MatrixView<T> y,
                     std::size_t i, bool accumulate) {
  T* __restrict out = y.data + i * y.cols;
  if (!accumulate)
    for (std::size_t j = 0; j < y.cols; ++j) out[j] = T{0};
  for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
    const T v = a.values[k];
    const T* xrow = x.data + a.col_idx[k] * x.cols;
#pragma omp simd
    for (std::size_t j = 0; j < y.cols; ++j) out[j] += v * xrow[j];
  }
}

template <typename T>
void check_nn(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c) {
  check(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols, "gemm_nn: shape mismatch");
}
template <typename T>
void check_nt(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c) {
  check(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows, "gemm_nt: shape mismatch");
}
template <typename T>
void check_tn(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c) {
  check(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols, "gemm_tn: shape mismatch");
}
template <typename T>
void check_spmm(const CsrMatrix<T>& a, ConstMatrixView<T> x, MatrixView<T> y) {
  check(a.cols == x.rows && y.rows == a.rows && y.cols == x.cols, "spmm: shape mismatch");
}

// Below this many multiply-adds a parallel region costs more than it saves.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

}  // namespace detail

namespace serial {

template <typename T>
void gemm_nn(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c, bool accumulate = false) {
  detail::check_nn(a, b, c);
  for (std::size_t i = 0; i < c.rows; ++i) detail::gemm_nn_row(a, b, c, i, accumulate);
}

template <typename T>
void gemm_nt(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c, bool accumulate = false) {
  detail::check_nt(a, b, c);
  for (std::size_t i = 0; i < c.rows; ++i) detail::gemm_nt_row(a, b, c, i, accumulate);
}

template <typename T>
void gemm_tn(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c, bool accumulate = false) {
  detail::check_tn(a, b, c);
  for (std::size_t i = 0; i < c.rows; ++i) detail::gemm_tn_row(a, b, c, i, accumulate);
}

template <typename T>
void spmm(const CsrMatrix<T>& a, ConstMatrixView<T> x, MatrixView<T> y, bool accumulate = false) {
  detail::check_spmm(a, x, y);
  for (std::size_t i = 0; i < y.rows; ++i) detail::spmm_row(a, x, y, i, accumulate);
}

}  // namespace serial

namespace parallel {

template <typename T>
void gemm_nn(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c, bool accumulate = false) {
  detail::check_nn(a, b, c);
  const auto rows = static_cast<std::int64_t>(c.rows);
  const bool big = c.rows * c.cols * a.cols >= detail::kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < rows; ++i)
    detail::gemm_nn_row(a, b, c, static_cast<std::size_t>(i), accumulate);
}

template <typename T>
void gemm_nt(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c, bool accumulate = false) {
  detail::check_nt(a, b, c);
  const auto rows = static_cast<std::int64_t>(c.rows);
  const bool big = c.rows * c.cols * a.cols >= detail::kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < rows; ++i)
    detail::gemm_nt_row(a, b, c, static_cast<std::size_t>(i), accumulate);
}

template <typename T>
void gemm_tn(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c, bool accumulate = false) {
  detail::check_tn(a, b, c);
  const auto rows = static_cast<std::int64_t>(c.rows);
  const bool big = c.rows * c.cols * a.rows >= detail::kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < rows; ++i)
    detail::gemm_tn_row(a, b, c, static_cast<std::size_t>(i), accumulate);
}

template <typename T>
void spmm(const CsrMatrix<T>& a, ConstMatrixView<T> x, MatrixView<T> y, bool accumulate = false) {
  detail::check_spmm(a, x, y);
  const auto rows = static_cast<std::int64_t>(y.rows);
  const bool big = a.nnz() * x.cols >= detail::kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < rows; ++i)
    detail::spmm_row(a, x, y, static_cast<std::size_t>(i), accumulate);
}

}  // namespace parallel

// Production code calls these.
using parallel::gemm_nn;
using parallel::gemm_nt;
using parallel::gemm_tn;
using parallel::spmm;

}  // namespace kernels
}  // namespace chaintree
