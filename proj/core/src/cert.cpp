#include "prunecert/cert.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "prunecert/csv.hpp"
#include "prunecert/distributions.hpp"

namespace prunecert {

double epsilon_l2(const MdpConstants& c, std::size_t state_dim) {
  if (c.norm_p == NormP::kL2) return c.epsilon;
  return std::sqrt(static_cast<double>(state_dim)) * c.epsilon;
}

double surrogate_lipschitz_layers(std::span<const DenseLayer> layers) {
  if (layers.empty()) throw std::invalid_argument("surrogate_lipschitz: empty network");
  double lip = 1.0;
  for (const DenseLayer& l : layers) {
    lip *= activation_lipschitz(l.act);
    const double fro = frobenius_norm(l.w);
    const double mixed = std::sqrt(one_norm(l.w) * inf_norm(l.w));
    lip *= std::min(fro, mixed);
  }
  return lip;
}

double surrogate_lipschitz(const PolicyNetwork& net) {
  return surrogate_lipschitz_layers(net.actor);
}

double alpha(const MdpConstants& c) {
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) {
    throw std::invalid_argument("alpha: gamma must be in [0,1)");
  }
  if (!(c.r_max > 0.0)) throw std::invalid_argument("alpha: r_max must be > 0");
  const double g = c.gamma;
  return 2.0 * (1.0 + g / ((1.0 - g) * (1.0 - g))) * c.r_max;
}

double head_constant(const PolicyNetwork& net, bool use_published_c) {
  if (net.head == HeadFamily::kGaussian) {
    return gaussian_c(net.sigma);
  }
  return use_published_c ? kCategoricalCPublished : categorical_c_verified();
}

double global_bound(const PolicyNetwork& net, const MdpConstants& c,
                    bool use_published_c) {
  const double eps = epsilon_l2(c, net.input_dim());
  return alpha(c) * head_constant(net, use_published_c) * surrogate_lipschitz(net) * eps;
}

double local_bound(const PolicyNetwork& net, std::span<const double> state,
                   const MdpConstants& c, double beta_smoothness,
                   bool use_published_c) {
  if (beta_smoothness < 0.0) {
    throw std::invalid_argument("local_bound: beta must be >= 0");
  }
  const double eps = epsilon_l2(c, net.input_dim());
  const Matrix jac = input_jacobian(net, state);
  const double op = spectral_norm(jac).value;
  return head_constant(net, use_published_c) *
         (op * eps + 0.5 * beta_smoothness * eps * eps);
}

namespace {

// ||J||_op for a wide (m x P) parameter Jacobian via the small m x m Gram
// matrix J J^T.
double wide_operator_norm(const Matrix& jac) {
  const Matrix gram = matmul_nt(jac, jac);
  return std::sqrt(std::max(spectral_norm(gram).value, 0.0));
}

PolicyNetwork blend_actor(const PolicyNetwork& from, const PolicyNetwork& to,
                          double t) {
  PolicyNetwork mix = from;
  for (std::size_t l = 0; l < mix.actor.size(); ++l) {
    for (std::size_t i = 0; i < mix.actor[l].w.data.size(); ++i) {
      mix.actor[l].w.data[i] += t * (to.actor[l].w.data[i] - from.actor[l].w.data[i]);
    }
    for (std::size_t i = 0; i < mix.actor[l].b.size(); ++i) {
      mix.actor[l].b[i] += t * (to.actor[l].b[i] - from.actor[l].b[i]);
    }
  }
  return mix;
}

void check_same_architecture(const PolicyNetwork& a, const PolicyNetwork& b) {
  if (a.actor.size() != b.actor.size()) {
    throw std::invalid_argument("path_sensitivity: architecture mismatch");
  }
  for (std::size_t l = 0; l < a.actor.size(); ++l) {
    if (a.actor[l].w.rows != b.actor[l].w.rows ||
        a.actor[l].w.cols != b.actor[l].w.cols) {
      throw std::invalid_argument("path_sensitivity: architecture mismatch");
    }
  }
}

}  // namespace

double path_sensitivity(const PolicyNetwork& net_theta,
                        const PolicyNetwork& net_theta_pruned,
                        std::span<const std::vector<double>> states,
                        std::size_t quadrature_points) {
  check_same_architecture(net_theta, net_theta_pruned);
  if (states.empty()) throw std::invalid_argument("path_sensitivity: no states");
  if (quadrature_points < 2) {
    throw std::invalid_argument("path_sensitivity: need >= 2 quadrature points");
  }
  // phi(t) = theta' + t (theta - theta'), t in [0,1]
  const std::size_t n = quadrature_points;
  std::vector<double> integrand(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(n - 1);
    const PolicyNetwork phi = blend_actor(net_theta_pruned, net_theta, t);
    double acc = 0.0;
    for (const auto& s : states) {
      const Matrix jac = actor_param_jacobian(phi, s);
      const double op = wide_operator_norm(jac);
      acc += op * op;
    }
    integrand[k] = std::sqrt(acc / static_cast<double>(states.size()));
  }
  double integral = 0.0;
  const double h = 1.0 / static_cast<double>(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    integral += 0.5 * h * (integrand[k] + integrand[k + 1]);
  }
  return integral;
}

double delta_theta_norm(const PolicyNetwork& a, const PolicyNetwork& b) {
  check_same_architecture(a, b);
  const std::vector<double> pa = flatten_actor_params(a);
  const std::vector<double> pb = flatten_actor_params(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = pa[i] - pb[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

std::string CertReport::to_text() const {
  std::ostringstream out;
  auto kv = [&out](const char* k, double v) {
    out << k << " = " << format_double(v) << "\n";
  };
  kv("lipschitz", surrogate_lipschitz);
  kv("lipschitz_pruned", lipschitz_pruned);
  kv("alpha", alpha);
  kv("c", c);
  kv("epsilon_l2", epsilon_l2);
  out << "epsilon_converted_from_linf = "
      << (epsilon_converted_from_linf ? "true" : "false") << "\n";
  kv("global_bound", global_bound);
  kv("local_bound_mean", local_bound_mean);
  kv("local_bound_max", local_bound_max);
  kv("beta_smoothness", beta_smoothness);
  kv("l_par", path_sensitivity);
  kv("delta_theta", delta_theta);
  kv("term1", term1);
  kv("term2", term2);
  kv("term3", term3);
  kv("total", total);
  return out.str();
}

std::vector<std::string> CertReport::csv_header() {
  return {"lipschitz", "alpha", "c", "global_bound", "local_bound_mean",
          "local_bound_max", "l_par", "delta_theta", "term1", "term2",
          "term3", "total"};
}

std::vector<std::string> CertReport::csv_row() const {
  return {format_double(surrogate_lipschitz), format_double(alpha),
          format_double(c), format_double(global_bound),
          format_double(local_bound_mean), format_double(local_bound_max),
          format_double(path_sensitivity), format_double(delta_theta),
          format_double(term1), format_double(term2), format_double(term3),
          format_double(total)};
}

CertReport certify(const PolicyNetwork& net, const PolicyNetwork* pruned,
                   std::span<const std::vector<double>> states,
                   const MdpConstants& constants, double beta_smoothness,
                   double clean_regret, bool use_published_c,
                   std::size_t quadrature_points) {
  CertReport r;
  r.surrogate_lipschitz = surrogate_lipschitz(net);
  r.alpha = alpha(constants);
  r.c = head_constant(net, use_published_c);
  r.epsilon_l2 = epsilon_l2(constants, net.input_dim());
  r.epsilon_converted_from_linf = constants.norm_p == NormP::kLinf;
  r.global_bound = r.alpha * r.c * r.surrogate_lipschitz * r.epsilon_l2;
  r.beta_smoothness = beta_smoothness;

  for (const auto& s : states) {
    r.local_bounds.push_back(
        local_bound(net, s, constants, beta_smoothness, use_published_c));
  }
  if (!r.local_bounds.empty()) {
    double acc = 0.0, mx = r.local_bounds[0];
    for (double v : r.local_bounds) {
      acc += v;
      mx = std::max(mx, v);
    }
    r.local_bound_mean = acc / static_cast<double>(r.local_bounds.size());
    r.local_bound_max = mx;
  }

  r.term1 = clean_regret;
  if (pruned != nullptr) {
    r.lipschitz_pruned = surrogate_lipschitz(*pruned);
    r.delta_theta = delta_theta_norm(net, *pruned);
    r.path_sensitivity =
        states.empty() ? 0.0
                       : path_sensitivity(net, *pruned, states, quadrature_points);
    r.term2 = r.alpha * r.c * r.path_sensitivity * r.delta_theta;
    r.term3 = r.alpha * r.c * r.lipschitz_pruned * r.epsilon_l2;
  } else {
    r.term3 = r.global_bound;
  }
  r.total = r.term1 + r.term2 + r.term3;
  return r;
}

EmpiricalRobustness empirical_f(const PolicyNetwork& net,
                                std::span<const std::vector<double>> states,
                                std::span<const std::vector<double>> attacked_states,
                                const MdpConstants& c) {
  if (states.empty()) throw std::invalid_argument("empirical_f: no states");
  if (states.size() != attacked_states.size()) {
    throw std::invalid_argument("empirical_f: state/attack count mismatch");
  }
  EmpiricalRobustness out;
  double acc = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const ActionDistribution p = forward(net, states[i]).dist;
    const ActionDistribution q = forward(net, attacked_states[i]).dist;
    const double tv = tv_exact(p, q);
    out.tv_per_state.push_back(tv);
    acc += tv;
  }
  out.f_theta_estimate = acc / static_cast<double>(states.size());
  out.b_theta_estimate = alpha(c) * out.f_theta_estimate;
  return out;
}

}  // namespace prunecert
