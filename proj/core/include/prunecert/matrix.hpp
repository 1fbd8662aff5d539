#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace prunecert {

/// Dense row-major matrix of doubles. The only tensor type in the project;
/// vectors are 1xN or Nx1 as context requires.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d);
  Matrix(std::initializer_list<std::initializer_list<double>> rows_init);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool all_finite() const;

  static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
  static Matrix identity(std::size_t n);
  static Matrix row(std::span<const double> v);
  static Matrix column(std::span<const double> v);
};

bool operator==(const Matrix& a, const Matrix& b);

Matrix matmul(const Matrix& a, const Matrix& b);     // a (n,k) * b (k,m)
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a (n,k) * b^T, b (m,k)
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b, a (k,n), b (k,m)
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// sqrt of the entrywise sum of squares, accumulated in index order.
/// Throws std::invalid_argument on non-finite entries.
double frobenius_norm(const Matrix& w);

/// max absolute column sum.
double one_norm(const Matrix& w);

/// max absolute row sum.
double inf_norm(const Matrix& w);

struct SpectralNormResult {
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Largest singular value by power iteration on W^T W. Deterministic: starts
/// from the normalized all-ones vector, cross-checked from an alternating-sign
/// start, returns the larger estimate.
SpectralNormResult spectral_norm(const Matrix& w, double tol = 1e-10,
                                 std::size_t max_iters = 10000);

}  // namespace prunecert
