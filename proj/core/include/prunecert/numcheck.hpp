#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prunecert/distributions.hpp"
#include "prunecert/matrix.hpp"

namespace prunecert {
namespace numcheck {

// Independent brute-force oracles. Nothing here shares code with the
// implementations it checks beyond the Matrix container.

/// Central finite differences per coordinate.
std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h = 1e-6);

struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  struct Outcome {
    double prob;
    std::size_t next_state;
    double reward;
  };
  // transitions[s][a] -> outcome list
  std::vector<std::vector<std::vector<Outcome>>> transitions;
};

/// Q* by fixed-point iteration to tol (sup norm).
Matrix value_iteration(const TabularMdp& mdp, double gamma, double tol = 1e-10,
                       std::size_t max_iters = 100000);

/// Q^pi for a fixed stochastic policy (n_states x n_actions probabilities).
Matrix policy_q(const TabularMdp& mdp, const Matrix& policy, double gamma,
                double tol = 1e-10, std::size_t max_iters = 100000);

struct OracleTv {
  double value = 0.0;
  std::string method;
};

/// Oracle total variation: categorical exact half L1; Gaussian via numeric
/// 1-D quadrature of the density difference along the whitened mean gap.
OracleTv mc_tv(const ActionDistribution& p, const ActionDistribution& q);

/// Numeric integral TV between N(0,1) and N(d,1) (Simpson rule).
double tv_normal_1d(double d);

/// Closed-form max of KL(pi(.|s) || pi(.|s_hat)) over the l-inf ball for a
/// rank-1 linear Gaussian policy mean(s) = w.s: (eps*||w||_1)^2 / (2 sigma^2).
double rank1_linear_kl_max(std::span<const double> w, double sigma, double eps);

/// E[r^2] of the uniform distribution on the D-ball of radius eps.
double uniform_ball_mean_square_radius(std::size_t dim, double eps);

struct SelfCheckLine {
  std::string name;
  bool passed = false;
  double got = 0.0;
  double expected = 0.0;
};

/// The analytic oracle suite behind `certify --self-check`.
std::vector<SelfCheckLine> self_check();

}  // namespace numcheck
}  // namespace prunecert
