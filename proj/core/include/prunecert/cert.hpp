#pragma once

#include <span>
#include <string>
#include <vector>

#include "prunecert/matrix.hpp"
#include "prunecert/policy.hpp"

namespace prunecert {

enum class NormP { kL2, kLinf };

struct MdpConstants {
  double gamma = 0.99;
  double r_max = 1.0;
  double epsilon = 0.075;
  NormP norm_p = NormP::kLinf;
};

/// Budget in the l2 metric the certificates are stated in: l-inf budgets
/// convert as eps_2 = sqrt(D) * eps_inf.
double epsilon_l2(const MdpConstants& c, std::size_t state_dim);

/// Product over actor layers of activation Lipschitz constants and
/// min(||W||_F, sqrt(||W||_1 ||W||_inf)). Biases ignored.
double surrogate_lipschitz(const PolicyNetwork& net);
double surrogate_lipschitz_layers(std::span<const DenseLayer> layers);

/// 2 [1 + gamma/(1-gamma)^2] R_max.
double alpha(const MdpConstants& c);

/// Output-to-TV constant for the network's head. Categorical defaults to the
/// verified 1/(2 sqrt 2); set use_published_c to reproduce the published 1/4.
double head_constant(const PolicyNetwork& net, bool use_published_c = false);

double global_bound(const PolicyNetwork& net, const MdpConstants& c,
                    bool use_published_c = false);

/// c * (||J_g(s)||_op * eps + 0.5 * beta * eps^2).
double local_bound(const PolicyNetwork& net, std::span<const double> state,
                   const MdpConstants& c, double beta_smoothness,
                   bool use_published_c = false);

/// Trapezoidal approximation of the path-averaged parameter sensitivity along
/// phi(t) = theta' + t (theta - theta'), E_s over the given states.
double path_sensitivity(const PolicyNetwork& net_theta,
                        const PolicyNetwork& net_theta_pruned,
                        std::span<const std::vector<double>> states,
                        std::size_t quadrature_points = 8);

/// Euclidean norm of the flattened actor parameter difference.
double delta_theta_norm(const PolicyNetwork& a, const PolicyNetwork& b);

struct CertReport {
  double surrogate_lipschitz = 0.0;   // of the certified network
  double lipschitz_pruned = 0.0;      // 0 when no pruned network given
  double alpha = 0.0;
  double c = 0.0;
  double epsilon_l2 = 0.0;
  bool epsilon_converted_from_linf = false;
  double global_bound = 0.0;
  std::vector<double> local_bounds;
  double local_bound_mean = 0.0;
  double local_bound_max = 0.0;
  double beta_smoothness = 0.0;
  double path_sensitivity = 0.0;      // L_par
  double delta_theta = 0.0;
  double term1 = 0.0;                 // clean regret (caller-supplied)
  double term2 = 0.0;                 // alpha c L_par ||dtheta||
  double term3 = 0.0;                 // alpha c L_pruned eps
  double total = 0.0;

  /// Flat key-value text record.
  std::string to_text() const;
  static std::vector<std::string> csv_header();
  std::vector<std::string> csv_row() const;
};

/// Full certification of `net`; when `pruned` is non-null the three-term
/// decomposition is evaluated along theta -> theta'. The comparator's clean
/// regret is an external input.
CertReport certify(const PolicyNetwork& net, const PolicyNetwork* pruned,
                   std::span<const std::vector<double>> states,
                   const MdpConstants& c, double beta_smoothness = 0.0,
                   double clean_regret = 0.0, bool use_published_c = false,
                   std::size_t quadrature_points = 8);

struct EmpiricalRobustness {
  double f_theta_estimate = 0.0;  // mean attack-achieved TV (lower bound on F)
  double b_theta_estimate = 0.0;  // alpha * F_hat
  std::vector<double> tv_per_state;
};

/// F_hat from states and their attack-chosen perturbed versions.
EmpiricalRobustness empirical_f(const PolicyNetwork& net,
                                std::span<const std::vector<double>> states,
                                std::span<const std::vector<double>> attacked_states,
                                const MdpConstants& c);

}  // namespace prunecert
