#include "prunecert/numcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace prunecert {
namespace numcheck {

std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  std::vector<double> xp(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

namespace {
Matrix q_iteration(const TabularMdp& mdp, const Matrix* policy, double gamma,
                   double tol, std::size_t max_iters) {
  Matrix q(mdp.n_states, mdp.n_actions);
  Matrix next(mdp.n_states, mdp.n_actions);
  for (std::size_t it = 0; it < max_iters; ++it) {
    double delta = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        double acc = 0.0;
        for (const auto& o : mdp.transitions[s][a]) {
          double future;
          if (policy) {
            future = 0.0;
            for (std::size_t a2 = 0; a2 < mdp.n_actions; ++a2) {
              future += (*policy)(o.next_state, a2) * q(o.next_state, a2);
            }
          } else {
            future = q(o.next_state, 0);
            for (std::size_t a2 = 1; a2 < mdp.n_actions; ++a2) {
              future = std::max(future, q(o.next_state, a2));
            }
          }
          acc += o.prob * (o.reward + gamma * future);
        }
        next(s, a) = acc;
        delta = std::max(delta, std::fabs(acc - q(s, a)));
      }
    }
    q = next;
    if (delta <= tol) break;
  }
  return q;
}
}  // namespace

Matrix value_iteration(const TabularMdp& mdp, double gamma, double tol,
                       std::size_t max_iters) {
  return q_iteration(mdp, nullptr, gamma, tol, max_iters);
}

Matrix policy_q(const TabularMdp& mdp, const Matrix& policy, double gamma,
                double tol, std::size_t max_iters) {
  return q_iteration(mdp, &policy, gamma, tol, max_iters);
}

double tv_normal_1d(double d) {
  // 0.5 * integral |phi(x) - phi(x-d)| dx over a wide window, Simpson rule.
  d = std::fabs(d);
  const double lo = -12.0, hi = d + 12.0;
  const std::size_t n = 20000;  // even
  const double step = (hi - lo) / static_cast<double>(n);
  auto f = [d](double x) {
    const double a = std::exp(-0.5 * x * x);
    const double b = std::exp(-0.5 * (x - d) * (x - d));
    return std::fabs(a - b);
  };
  double acc = f(lo) + f(hi);
  for (std::size_t i = 1; i < n; ++i) {
    const double x = lo + step * static_cast<double>(i);
    acc += f(x) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  const double integral = acc * step / 3.0 / std::sqrt(2.0 * M_PI);
  return 0.5 * integral;
}

OracleTv mc_tv(const ActionDistribution& p, const ActionDistribution& q) {
  OracleTv out;
  if (p.family != q.family) throw std::invalid_argument("mc_tv: family mismatch");
  if (p.family == HeadFamily::kCategorical) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) {
      acc += std::fabs(p.probs[i] - q.probs[i]);
    }
    out.value = 0.5 * acc;
    out.method = "exact half-L1";
    return out;
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < p.mean.size(); ++i) {
    if (p.std[i] != q.std[i]) throw std::invalid_argument("mc_tv: stds must match");
    const double z = (p.mean[i] - q.mean[i]) / p.std[i];
    d2 += z * z;
  }
  out.value = tv_normal_1d(std::sqrt(d2));
  out.method = "numeric 1-D quadrature";
  return out;
}

double rank1_linear_kl_max(std::span<const double> w, double sigma, double eps) {
  double l1 = 0.0;
  for (double v : w) l1 += std::fabs(v);
  const double reach = eps * l1;
  return reach * reach / (2.0 * sigma * sigma);
}

double uniform_ball_mean_square_radius(std::size_t dim, double eps) {
  const double d = static_cast<double>(dim);
  return eps * eps * d / (d + 2.0);
}

std::vector<SelfCheckLine> self_check() {
  std::vector<SelfCheckLine> lines;
  auto push = [&lines](const std::string& name, double got, double expected,
                       double tol) {
    SelfCheckLine l;
    l.name = name;
    l.got = got;
    l.expected = expected;
    l.passed = std::fabs(got - expected) <= tol;
    lines.push_back(l);
  };

  {
    auto f = [](std::span<const double> x) { return x[0] * x[0]; };
    std::vector<double> x{3.0};
    push("finite_diff d(x^2)/dx at 3", finite_diff_grad(f, x)[0], 6.0, 1e-5);
  }
  {
    auto f = [](std::span<const double> x) { return std::tanh(x[0]); };
    std::vector<double> x{0.0};
    push("finite_diff d(tanh)/dx at 0", finite_diff_grad(f, x)[0], 1.0, 1e-5);
  }
  {
    TabularMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.transitions = {{{{1.0, 0, 1.0}}}};
    push("value_iteration single state r=1 gamma=0.5",
         value_iteration(mdp, 0.5)(0, 0), 2.0, 1e-8);
    push("value_iteration gamma=0", value_iteration(mdp, 0.0)(0, 0), 1.0, 1e-12);
  }
  {
    auto p = ActionDistribution::gaussian({0.0}, {1.0});
    push("tv identical gaussians", mc_tv(p, p).value, 0.0, 1e-9);
    auto q = ActionDistribution::gaussian({2.0}, {1.0});
    push("tv gaussian |dmu|=2sigma", mc_tv(p, q).value,
         2.0 * standard_normal_cdf(1.0) - 1.0, 1e-6);
  }
  {
    auto p = ActionDistribution::categorical({1.0, 0.0});
    auto q = ActionDistribution::categorical({0.0, 1.0});
    push("tv binary softmax (1,0) vs (0,1)", mc_tv(p, q).value,
         std::tanh(0.5), 1e-9);
  }
  return lines;
}

}  // namespace numcheck
}  // namespace prunecert
