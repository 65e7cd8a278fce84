#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

extern "C" {
void dgemm_(const char* transa, const char* transb, const int* m, const int* n,
            const int* k, const double* alpha, const double* a, const int* lda,
            const double* b, const int* ldb, const double* beta, double* c,
            const int* ldc);
}

namespace valen {

// Dense row-major matrix of doubles. All shapes are checked at runtime;
// scalar results are represented as 1x1 matrices.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative shape");
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs) {
    Matrix m(static_cast<int>(rs.size()),
             rs.size() ? static_cast<int>(rs.begin()->size()) : 0);
    int i = 0;
    for (const auto& r : rs) {
      if (static_cast<int>(r.size()) != m.cols)
        throw std::invalid_argument("Matrix::from_rows: ragged rows");
      int j = 0;
      for (double v : r) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static Matrix scalar(double v) {
    Matrix m(1, 1);
    m.data[0] = v;
    return m;
  }

  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
  double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch (" +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                " vs " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols) + ")");
}

// C = A * B via BLAS. Row-major is handled by computing B^T A^T = C^T in
// column-major terms.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dim mismatch");
  Matrix c(a.rows, b.cols);
  if (a.rows == 0 || b.cols == 0 || a.cols == 0) return c;
  const double one = 1.0, zero = 0.0;
  dgemm_("N", "N", &b.cols, &a.rows, &a.cols, &one, b.data.data(), &b.cols,
         a.data.data(), &a.cols, &zero, c.data.data(), &c.cols);
  return c;
}

// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: dim mismatch");
  Matrix c(a.rows, b.rows);
  if (a.rows == 0 || b.rows == 0 || a.cols == 0) return c;
  const double one = 1.0, zero = 0.0;
  dgemm_("T", "N", &b.rows, &a.rows, &a.cols, &one, b.data.data(), &b.cols,
         a.data.data(), &a.cols, &zero, c.data.data(), &c.cols);
  return c;
}

// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: dim mismatch");
  Matrix c(a.cols, b.cols);
  if (a.cols == 0 || b.cols == 0 || a.rows == 0) return c;
  const double one = 1.0, zero = 0.0;
  dgemm_("N", "T", &b.cols, &a.cols, &a.rows, &one, b.data.data(), &b.cols,
         a.data.data(), &a.cols, &zero, c.data.data(), &c.cols);
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c.data[i] += b.data[i];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "sub");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c.data[i] *= b.data[i];
  return c;
}

inline Matrix scaled(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data) v *= s;
  return c;
}

template <class F>
inline Matrix map(const Matrix& a, F f) {
  Matrix c = a;
  for (double& v : c.data) v = f(v);
  return c;
}

inline Matrix add_rowvec(const Matrix& a, const Matrix& r) {
  if (r.rows != 1 || r.cols != a.cols)
    throw std::invalid_argument("add_rowvec: expected 1x" + std::to_string(a.cols));
  Matrix c = a;
  for (int i = 0; i < c.rows; ++i)
    for (int j = 0; j < c.cols; ++j) c(i, j) += r(0, j);
  return c;
}

inline Matrix row_sums(const Matrix& a) {
  Matrix s(a.rows, 1);
  for (int i = 0; i < a.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < a.cols; ++j) acc += a(i, j);
    s(i, 0) = acc;
  }
  return s;
}

inline Matrix col_sums(const Matrix& a) {
  Matrix s(1, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) s(0, j) += a(i, j);
  return s;
}

inline double sum(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v;
  return acc;
}

inline double frob_norm_sq(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v * v;
  return acc;
}

inline Matrix select_rows(const Matrix& a, const std::vector<int>& idx) {
  Matrix c(static_cast<int>(idx.size()), a.cols);
  for (size_t i = 0; i < idx.size(); ++i) {
    const double* src = a.row(idx[i]);
    double* dst = c.row(static_cast<int>(i));
    std::copy(src, src + a.cols, dst);
  }
  return c;
}

// Submatrix with both rows and columns restricted to idx (used for
// batch-induced adjacency blocks).
inline Matrix select_rows_cols(const Matrix& a, const std::vector<int>& idx) {
  Matrix c(static_cast<int>(idx.size()), static_cast<int>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i)
    for (size_t j = 0; j < idx.size(); ++j)
      c(static_cast<int>(i), static_cast<int>(j)) = a(idx[i], idx[j]);
  return c;
}

inline int argmax_row(const Matrix& a, int i) {
  int best = 0;
  for (int j = 1; j < a.cols; ++j)
    if (a(i, j) > a(i, best)) best = j;
  return best;
}

}  // namespace valen
