#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "prunecert/matrix.hpp"
#include "prunecert/rng.hpp"

using namespace prunecert;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 2.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = uniform_range(rng, -scale, scale);
  return m;
}

}  // namespace

TEST_CASE("frobenius norm examples") {
  CHECK(frobenius_norm(Matrix{{3.0, 4.0}}) == doctest::Approx(5.0));
  CHECK(frobenius_norm(Matrix::zeros(2, 2)) == 0.0);
  CHECK(frobenius_norm(Matrix{{1.0, -2.0}, {3.0, 4.0}}) ==
        doctest::Approx(std::sqrt(30.0)));
}

TEST_CASE("one and inf norms") {
  const Matrix w{{1.0, -2.0}, {3.0, 4.0}};
  CHECK(one_norm(w) == doctest::Approx(6.0));
  CHECK(inf_norm(w) == doctest::Approx(7.0));
  const Matrix eye = Matrix::identity(5);
  CHECK(one_norm(eye) == 1.0);
  CHECK(inf_norm(eye) == 1.0);
}

TEST_CASE("norms reject non-finite input") {
  Matrix w{{1.0, 2.0}};
  w.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(frobenius_norm(w), std::invalid_argument);
  CHECK_THROWS_AS(one_norm(w), std::invalid_argument);
  CHECK_THROWS_AS(inf_norm(w), std::invalid_argument);
}

TEST_CASE("spectral norm examples") {
  CHECK(spectral_norm(Matrix{{3.0, 0.0}, {0.0, 1.0}}).value == doctest::Approx(3.0));
  CHECK(spectral_norm(Matrix{{0.0, 1.0}, {0.0, 0.0}}).value == doctest::Approx(1.0));
  CHECK(spectral_norm(Matrix{{1.0, 1.0}, {1.0, 1.0}}).value == doctest::Approx(2.0));
  CHECK(spectral_norm(Matrix::zeros(3, 2)).value == 0.0);
}

TEST_CASE("spectral norm reports non-convergence when starved of iterations") {
  std::mt19937_64 rng(19);
  const Matrix w = random_matrix(6, 6, rng);
  const SpectralNormResult starved = spectral_norm(w, 1e-14, 1);
  CHECK_FALSE(starved.converged);
  const SpectralNormResult full = spectral_norm(w);
  CHECK(full.converged);
  CHECK(starved.value <= full.value + 1e-9);
  CHECK_THROWS_AS(spectral_norm(w, 0.0), std::invalid_argument);
}

TEST_CASE("spectral norm finds the top singular value when the ones vector is orthogonal") {
  // top right-singular direction (1,-1)/sqrt(2)
  const Matrix w{{2.0, -2.0}, {0.0, 0.0}};
  CHECK(spectral_norm(w).value == doctest::Approx(2.0 * std::sqrt(2.0)));
}

TEST_CASE("spectral norm never exceeds the surrogate bounds") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t r = 1 + rng() % 6;
    const std::size_t c = 1 + rng() % 6;
    const Matrix w = random_matrix(r, c, rng);
    const double sigma = spectral_norm(w).value;
    const double tol = 1e-8 * std::max(1.0, sigma);
    CHECK(sigma <= frobenius_norm(w) + tol);
    CHECK(sigma <= std::sqrt(one_norm(w) * inf_norm(w)) + tol);
  }
}

TEST_CASE("entrywise zeroing never increases any norm, exactly") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t r = 1 + rng() % 5;
    const std::size_t c = 1 + rng() % 5;
    Matrix w = random_matrix(r, c, rng);
    Matrix masked = w;
    for (double& v : masked.data) {
      if (uniform01(rng) < 0.4) v = 0.0;
    }
    CHECK(frobenius_norm(masked) <= frobenius_norm(w));
    CHECK(one_norm(masked) <= one_norm(w));
    CHECK(inf_norm(masked) <= inf_norm(w));
  }
}

TEST_CASE("matmul identities") {
  std::mt19937_64 rng(3);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix b = random_matrix(4, 2, rng);
  const Matrix c = matmul(a, b);
  CHECK(c.rows == 3);
  CHECK(c.cols == 2);
  const Matrix c2 = matmul_nt(a, transpose(b));
  for (std::size_t i = 0; i < c.data.size(); ++i) {
    CHECK(c.data[i] == doctest::Approx(c2.data[i]));
  }
  const Matrix c3 = matmul_tn(transpose(a), b);
  for (std::size_t i = 0; i < c.data.size(); ++i) {
    CHECK(c.data[i] == doctest::Approx(c3.data[i]));
  }
}
