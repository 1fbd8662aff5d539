#include "prunecert/matrix.hpp"

#include <cmath>
#include <stdexcept>

namespace prunecert {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d)
    : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != rows * cols) {
    throw std::invalid_argument("Matrix: data length must equal rows*cols");
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows_init) {
  rows = rows_init.size();
  cols = rows == 0 ? 0 : rows_init.begin()->size();
  data.reserve(rows * cols);
  for (const auto& r : rows_init) {
    if (r.size() != cols) {
      throw std::invalid_argument("Matrix: ragged initializer");
    }
    data.insert(data.end(), r.begin(), r.end());
  }
}

bool Matrix::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row(std::span<const double> v) {
  Matrix m(1, v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v[i];
  return m;
}

Matrix Matrix::column(std::span<const double> v) {
  Matrix m(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v[i];
  return m;
}

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dims differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.data.data() + i * a.cols;
    double* ci = c.data.data() + i * c.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.data.data() + i * a.cols;
    double* ci = c.data.data() + i * c.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dims differ");
  Matrix c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ak = a.data.data() + k * a.cols;
    const double* bk = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument("hadamard: shape mismatch");
  }
  Matrix c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] * b.data[i];
  return c;
}

namespace {

void require_finite(const Matrix& w, const char* op) {
  if (!w.all_finite()) {
    throw std::invalid_argument(std::string(op) + ": non-finite entry");
  }
}

}  // namespace

double frobenius_norm(const Matrix& w) {
  require_finite(w, "frobenius_norm");
  // Sequential accumulation in index order; zeroing entries can only lower
  // every partial sum, which makes the pruning monotonicity exact in floating
  // point, not just in exact arithmetic.
  double acc = 0.0;
  for (double v : w.data) acc += v * v;
  return std::sqrt(acc);
}

double one_norm(const Matrix& w) {
  require_finite(w, "one_norm");
  double best = 0.0;
  for (std::size_t j = 0; j < w.cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.rows; ++i) acc += std::fabs(w(i, j));
    if (acc > best) best = acc;
  }
  return best;
}

double inf_norm(const Matrix& w) {
  require_finite(w, "inf_norm");
  double best = 0.0;
  for (std::size_t i = 0; i < w.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) acc += std::fabs(w(i, j));
    if (acc > best) best = acc;
  }
  return best;
}

namespace {

SpectralNormResult power_iteration(const Matrix& w, std::vector<double> v,
                                   double tol, std::size_t max_iters) {
  const std::size_t n = w.cols;
  const std::size_t m = w.rows;
  std::vector<double> u(m, 0.0);
  std::vector<double> back(n, 0.0);
  double sigma_prev = -1.0;
  SpectralNormResult result;
  for (std::size_t it = 0; it < max_iters; ++it) {
    // u = W v
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      const double* wi = w.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) acc += wi[j] * v[j];
      u[i] = acc;
    }
    double sigma = 0.0;
    for (double x : u) sigma += x * x;
    sigma = std::sqrt(sigma);
    result.value = sigma;
    result.iterations = it + 1;
    if (sigma == 0.0) {
      result.converged = true;
      return result;
    }
    if (sigma_prev >= 0.0 && std::fabs(sigma - sigma_prev) <= tol * sigma) {
      result.converged = true;
      return result;
    }
    sigma_prev = sigma;
    // v = W^T u, normalized
    for (std::size_t j = 0; j < n; ++j) back[j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double* wi = w.data.data() + i * n;
      const double ui = u[i];
      for (std::size_t j = 0; j < n; ++j) back[j] += wi[j] * ui;
    }
    double norm = 0.0;
    for (double x : back) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      result.converged = true;
      return result;
    }
    for (std::size_t j = 0; j < n; ++j) v[j] = back[j] / norm;
  }
  result.converged = false;
  return result;
}

}  // namespace

SpectralNormResult spectral_norm(const Matrix& w, double tol, std::size_t max_iters) {
  if (tol <= 0.0) throw std::invalid_argument("spectral_norm: tol must be > 0");
  require_finite(w, "spectral_norm");
  if (w.rows == 0 || w.cols == 0) return {0.0, true, 0};

  const std::size_t n = w.cols;
  const double inv = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<double> ones(n, inv);
  SpectralNormResult a = power_iteration(w, ones, tol, max_iters);

  // Second deterministic start guards against the ones vector sitting in a
  // lower eigenspace of W^T W.
  std::vector<double> alt(n);
  for (std::size_t j = 0; j < n; ++j) alt[j] = (j % 2 == 0 ? inv : -inv);
  SpectralNormResult b = power_iteration(w, alt, tol, max_iters);

  return (b.value > a.value) ? b : a;
}

}  // namespace prunecert
