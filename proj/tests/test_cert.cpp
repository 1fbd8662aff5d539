#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "prunecert/cert.hpp"
#include "prunecert/distributions.hpp"
#include "prunecert/rng.hpp"

using namespace prunecert;

namespace {

PolicyNetwork single_layer_net(Matrix w, Activation act = Activation::kIdentity,
                               HeadFamily head = HeadFamily::kGaussian,
                               double sigma = 1.0) {
  PolicyNetwork net;
  DenseLayer l;
  l.b.assign(w.rows, 0.0);
  l.act = act;
  l.w = std::move(w);
  net.actor = {l};
  DenseLayer c;
  c.w = Matrix::zeros(1, net.actor[0].w.cols);
  c.b = {0.0};
  c.act = Activation::kIdentity;
  net.critic = {c};
  net.head = head;
  if (head == HeadFamily::kGaussian) net.sigma.assign(net.actor[0].w.rows, sigma);
  return net;
}

PolicyNetwork random_net(std::mt19937_64& rng, std::size_t in, std::size_t out,
                         std::size_t layers, Activation act) {
  std::vector<std::size_t> hidden(layers > 1 ? layers - 1 : 0, 0);
  for (auto& h : hidden) h = 2 + rng() % 5;
  PolicyNetwork net =
      make_mlp_policy(in, out, hidden, act, HeadFamily::kGaussian, 0.5, rng);
  for (DenseLayer& l : net.actor) {
    for (double& v : l.w.data) v = uniform_range(rng, -1.5, 1.5);
  }
  return net;
}

}  // namespace

TEST_CASE("surrogate lipschitz examples") {
  CHECK(surrogate_lipschitz(single_layer_net(Matrix{{3.0, 4.0}})) ==
        doctest::Approx(5.0));  // min(5, sqrt(4*7)=5.2915)
  CHECK(surrogate_lipschitz(single_layer_net(Matrix::identity(4))) ==
        doctest::Approx(1.0));
  CHECK(surrogate_lipschitz(single_layer_net(Matrix{{0.0, 4.0}})) ==
        doctest::Approx(4.0));
  PolicyNetwork empty;
  CHECK_THROWS_AS(surrogate_lipschitz(empty), std::logic_error);
}

TEST_CASE("alpha examples") {
  CHECK(alpha({0.0, 1.0, 0.1, NormP::kL2}) == doctest::Approx(2.0));
  CHECK(alpha({0.99, 1.0, 0.1, NormP::kL2}) == doctest::Approx(19802.0));
  CHECK(alpha({0.9, 2.0, 0.1, NormP::kL2}) == doctest::Approx(364.0));
  CHECK_THROWS_AS(alpha({1.0, 1.0, 0.1, NormP::kL2}), std::invalid_argument);
}

TEST_CASE("global bound composes") {
  PolicyNetwork net = single_layer_net(Matrix::identity(1));
  MdpConstants c{0.0, 1.0, 1.0, NormP::kL2};
  CHECK(global_bound(net, c) == doctest::Approx(2.0 / std::sqrt(2.0 * M_PI)));
  c.epsilon = 0.0;
  CHECK(global_bound(net, c) == 0.0);
}

TEST_CASE("l-inf budgets convert by sqrt(D)") {
  PolicyNetwork net = single_layer_net(Matrix::identity(4));
  MdpConstants l2{0.9, 1.0, 2.0, NormP::kL2};
  MdpConstants linf{0.9, 1.0, 1.0, NormP::kLinf};
  CHECK(epsilon_l2(linf, 4) == doctest::Approx(2.0));
  CHECK(global_bound(net, linf) == doctest::Approx(global_bound(net, l2)));
}

TEST_CASE("pruning never raises the global bound") {
  std::mt19937_64 rng(5);
  MdpConstants c{0.95, 1.0, 0.1, NormP::kL2};
  for (int trial = 0; trial < 500; ++trial) {
    PolicyNetwork net = random_net(rng, 3, 2, 1 + rng() % 4,
                                   trial % 2 ? Activation::kTanh : Activation::kRelu);
    PolicyNetwork pruned = net;
    for (DenseLayer& l : pruned.actor) {
      for (double& v : l.w.data) {
        if (uniform01(rng) < 0.4) v = 0.0;
      }
    }
    CHECK(surrogate_lipschitz(pruned) <= surrogate_lipschitz(net));
    CHECK(global_bound(pruned, c) <= global_bound(net, c));
  }
}

TEST_CASE("local bound examples") {
  const Matrix w{{1.0, 2.0}, {0.5, -1.0}};
  PolicyNetwork net = single_layer_net(w);
  MdpConstants c{0.0, 1.0, 0.5, NormP::kL2};
  const std::vector<double> s{0.3, 0.3};
  const double expected =
      gaussian_c(net.sigma) * spectral_norm(w).value * 0.5;
  CHECK(local_bound(net, s, c, 0.0) == doctest::Approx(expected));
  c.epsilon = 0.0;
  CHECK(local_bound(net, s, c, 0.0) == 0.0);
  c.epsilon = 0.5;
  CHECK(local_bound(net, s, c, 2.0) ==
        doctest::Approx(expected + gaussian_c(net.sigma) * 0.5 * 2.0 * 0.25));
  CHECK_THROWS_AS(local_bound(net, s, c, -1.0), std::invalid_argument);
}

TEST_CASE("local jacobian norm stays under the surrogate lipschitz on relu nets") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    PolicyNetwork net = random_net(rng, 4, 2, 2, Activation::kRelu);
    const double lip = surrogate_lipschitz(net);
    for (int k = 0; k < 5; ++k) {
      std::vector<double> s(4);
      for (double& v : s) v = uniform_range(rng, -2.0, 2.0);
      const double op = spectral_norm(input_jacobian(net, s)).value;
      CHECK(op <= lip + 1e-9);
    }
  }
}

TEST_CASE("path sensitivity on the degenerate path equals the endpoint value") {
  std::mt19937_64 rng(9);
  PolicyNetwork net = random_net(rng, 3, 2, 2, Activation::kTanh);
  std::vector<std::vector<double>> states;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> s(3);
    for (double& v : s) v = uniform_range(rng, -1.0, 1.0);
    states.push_back(s);
  }
  const double l8 = path_sensitivity(net, net, states, 8);
  const double l2 = path_sensitivity(net, net, states, 2);
  CHECK(l8 == doctest::Approx(l2));  // constant integrand
  CHECK(l8 > 0.0);
}

TEST_CASE("path sensitivity of the 1-parameter linear model is the state norm") {
  // g(s) = w*s, states {1}: J_w g = s = 1 so L_par = 1 on any path
  PolicyNetwork a = single_layer_net(Matrix{{0.7}});
  a.actor[0].b = {0.0};
  PolicyNetwork b = single_layer_net(Matrix{{0.2}});
  b.actor[0].b = {0.0};
  std::vector<std::vector<double>> states{{1.0}};
  // parameter vector includes the bias: J = [s, 1], norm sqrt(2)
  const double expected = std::sqrt(2.0);
  CHECK(path_sensitivity(a, b, states, 8) == doctest::Approx(expected));
}

TEST_CASE("quadrature refinement changes a smooth path integral by under 1 percent") {
  std::mt19937_64 rng(11);
  PolicyNetwork net = random_net(rng, 3, 2, 2, Activation::kTanh);
  PolicyNetwork pruned = net;
  for (DenseLayer& l : pruned.actor) {
    for (double& v : l.w.data) {
      if (uniform01(rng) < 0.5) v = 0.0;
    }
  }
  std::vector<std::vector<double>> states;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> s(3);
    for (double& v : s) v = uniform_range(rng, -1.0, 1.0);
    states.push_back(s);
  }
  const double coarse = path_sensitivity(net, pruned, states, 8);
  const double fine = path_sensitivity(net, pruned, states, 16);
  CHECK(std::fabs(fine - coarse) / std::max(std::fabs(fine), 1e-12) < 0.01);
}

TEST_CASE("three-term report examples") {
  std::mt19937_64 rng(13);
  PolicyNetwork net = random_net(rng, 3, 2, 2, Activation::kTanh);
  MdpConstants c{0.9, 1.0, 0.1, NormP::kL2};
  std::vector<std::vector<double>> states{{0.1, 0.2, 0.3}};

  // theta' = theta: the pruning-loss term vanishes
  const CertReport same = certify(net, &net, states, c, 0.0, 1.5);
  CHECK(same.term1 == doctest::Approx(1.5));
  CHECK(same.delta_theta == doctest::Approx(0.0));
  CHECK(same.term2 == doctest::Approx(0.0));
  CHECK(same.total == doctest::Approx(same.term1 + same.term3));

  // all-zero network pruned anywhere: every term but the regret is zero
  PolicyNetwork zero = net;
  for (DenseLayer& l : zero.actor) {
    std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  const CertReport z = certify(zero, &zero, states, c, 0.0, 0.25);
  CHECK(z.term2 == doctest::Approx(0.0));
  CHECK(z.term3 == doctest::Approx(0.0));
  CHECK(z.total == doctest::Approx(0.25));
}

TEST_CASE("three-term hand-built single-layer case") {
  // g(s) = w s, w scalar; prune w -> 0. States {s0}.
  const double w = 1.25, s0 = 2.0, sigma = 0.5, eps = 0.3;
  PolicyNetwork a = single_layer_net(Matrix{{w}}, Activation::kIdentity,
                                     HeadFamily::kGaussian, sigma);
  PolicyNetwork b = single_layer_net(Matrix{{0.0}}, Activation::kIdentity,
                                     HeadFamily::kGaussian, sigma);
  MdpConstants c{0.5, 2.0, eps, NormP::kL2};
  std::vector<std::vector<double>> states{{s0}};
  const CertReport r = certify(a, &b, states, c, 0.0, 0.0);
  const double alpha_v = 2.0 * (1.0 + 0.5 / 0.25) * 2.0;  // 12
  const double c_v = 1.0 / std::sqrt(2.0 * M_PI * sigma * sigma);
  // J_param = [s0, 1] along the whole path -> L_par = sqrt(s0^2+1)
  const double l_par = std::sqrt(s0 * s0 + 1.0);
  CHECK(r.alpha == doctest::Approx(alpha_v));
  CHECK(r.c == doctest::Approx(c_v));
  CHECK(r.path_sensitivity == doctest::Approx(l_par));
  CHECK(r.delta_theta == doctest::Approx(w));
  CHECK(r.term2 == doctest::Approx(alpha_v * c_v * l_par * w));
  CHECK(r.term3 == doctest::Approx(0.0));  // pruned lipschitz is 0
  CHECK(r.total == doctest::Approx(r.term1 + r.term2 + r.term3));
}

TEST_CASE("path sensitivity and empirical F validate their inputs") {
  std::mt19937_64 rng(23);
  PolicyNetwork a = random_net(rng, 3, 2, 2, Activation::kTanh);
  PolicyNetwork b = random_net(rng, 3, 2, 1, Activation::kTanh);
  std::vector<std::vector<double>> states{{0.1, 0.2, 0.3}};
  CHECK_THROWS_AS(path_sensitivity(a, b, states, 8), std::invalid_argument);
  CHECK_THROWS_AS(path_sensitivity(a, a, states, 1), std::invalid_argument);
  CHECK_THROWS_AS(path_sensitivity(a, a, {}, 8), std::invalid_argument);
  MdpConstants c{0.9, 1.0, 0.1, NormP::kL2};
  CHECK_THROWS_AS(empirical_f(a, {}, {}, c), std::invalid_argument);
}

TEST_CASE("empirical F examples") {
  std::mt19937_64 rng(17);
  PolicyNetwork net = random_net(rng, 3, 2, 2, Activation::kTanh);
  MdpConstants c{0.9, 1.0, 0.1, NormP::kL2};
  std::vector<std::vector<double>> states, attacked;
  for (int i = 0; i < 8; ++i) {
    std::vector<double> s(3);
    for (double& v : s) v = uniform_range(rng, -1.0, 1.0);
    states.push_back(s);
    attacked.push_back(s);  // no-op attack
  }
  const EmpiricalRobustness no_op = empirical_f(net, states, attacked, c);
  CHECK(no_op.f_theta_estimate == doctest::Approx(0.0));
  CHECK(no_op.b_theta_estimate == doctest::Approx(0.0));

  // constant-output network: F_hat = 0 under any perturbation
  PolicyNetwork constant = net;
  for (DenseLayer& l : constant.actor) {
    std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
  }
  std::vector<std::vector<double>> shifted = states;
  for (auto& s : shifted) {
    for (double& v : s) v += 0.05;
  }
  CHECK(empirical_f(constant, states, shifted, c).f_theta_estimate ==
        doctest::Approx(0.0));
}

TEST_CASE("empirical F matches the closed form for a linear gaussian policy") {
  // mean(s) = W s; best l2 perturbation of size eps moves the mean by
  // sigma_max(W) * eps along the top singular direction.
  const Matrix w{{1.0, 0.5}, {0.0, 2.0}};
  PolicyNetwork net = single_layer_net(w, Activation::kIdentity,
                                       HeadFamily::kGaussian, 1.0);
  MdpConstants c{0.9, 1.0, 0.2, NormP::kL2};
  const double eps = 0.2;

  // top right singular vector by dense 2x2 analysis through power iteration
  const double smax = spectral_norm(w).value;
  // find v via one backward: W^T W v = smax^2 v; iterate explicitly
  std::vector<double> v{1.0, 1.0};
  for (int it = 0; it < 200; ++it) {
    std::vector<double> wv{w(0, 0) * v[0] + w(0, 1) * v[1],
                           w(1, 0) * v[0] + w(1, 1) * v[1]};
    std::vector<double> wtv{w(0, 0) * wv[0] + w(1, 0) * wv[1],
                            w(0, 1) * wv[0] + w(1, 1) * wv[1]};
    const double n = std::sqrt(wtv[0] * wtv[0] + wtv[1] * wtv[1]);
    v = {wtv[0] / n, wtv[1] / n};
  }
  std::vector<std::vector<double>> states{{0.4, -0.2}}, attacked{{0.4 + eps * v[0],
                                                                  -0.2 + eps * v[1]}};
  const EmpiricalRobustness f = empirical_f(net, states, attacked, c);
  const double expected_tv = 2.0 * standard_normal_cdf(smax * eps / 2.0) - 1.0;
  CHECK(f.f_theta_estimate == doctest::Approx(expected_tv).epsilon(1e-6));
  CHECK(f.b_theta_estimate == doctest::Approx(alpha(c) * f.f_theta_estimate));
}

TEST_CASE("cert report text and csv stay in sync") {
  std::mt19937_64 rng(19);
  PolicyNetwork net = random_net(rng, 3, 2, 2, Activation::kTanh);
  MdpConstants c{0.9, 1.0, 0.1, NormP::kLinf};
  std::vector<std::vector<double>> states{{0.1, 0.2, 0.3}};
  const CertReport r = certify(net, nullptr, states, c);
  CHECK(r.epsilon_converted_from_linf);
  CHECK(r.csv_row().size() == CertReport::csv_header().size());
  CHECK(r.to_text().find("lipschitz = ") != std::string::npos);
  CHECK(r.local_bound_max >= r.local_bound_mean);
}
