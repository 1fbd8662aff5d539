#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "prunecert/attack.hpp"
#include "prunecert/numcheck.hpp"
#include "prunecert/rng.hpp"

using namespace prunecert;

namespace {

PolicyNetwork linear_gaussian(const Matrix& w, double sigma) {
  PolicyNetwork net;
  DenseLayer l;
  l.w = w;
  l.b.assign(w.rows, 0.0);
  l.act = Activation::kIdentity;
  net.actor = {l};
  DenseLayer c;
  c.w = Matrix::zeros(1, w.cols);
  c.b = {0.0};
  c.act = Activation::kIdentity;
  net.critic = {c};
  net.head = HeadFamily::kGaussian;
  net.sigma.assign(w.rows, sigma);
  return net;
}

// A two-state chain with one-hot observations; action 1 swaps states, reward
// is paid for landing in state 1.
class ChainEnv final : public Environment {
 public:
  ChainEnv() {
    spec_.name = "chain";
    spec_.state_dim = 2;  // state index + step
    spec_.obs_dim = 2;
    spec_.discrete_actions = true;
    spec_.action_dim = 2;
    spec_.horizon = 64;
    spec_.r_max = 1.0;
  }
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(std::mt19937_64& rng) const override {
    return {uniform01(rng) < 0.5 ? 0.0 : 1.0, 0.0};
  }
  Transition step(std::span<const double> state, const Action& action) const override {
    const std::size_t a = std::get<std::size_t>(action);
    const std::size_t s = static_cast<std::size_t>(state[0]);
    const std::size_t next = a == 0 ? s : 1 - s;
    Transition tr;
    tr.state.assign(state.begin(), state.end());
    tr.action = action;
    tr.reward = next == 1 ? 1.0 : 0.0;
    const double t = state[1] + 1.0;
    tr.next_state = {static_cast<double>(next), t};
    tr.done = t >= static_cast<double>(spec_.horizon);
    return tr;
  }
  std::vector<double> observe(std::span<const double> state) const override {
    return state[0] < 0.5 ? std::vector<double>{1.0, 0.0}
                          : std::vector<double>{0.0, 1.0};
  }

 private:
  EnvSpec spec_;
};

}  // namespace

TEST_CASE("random attack respects both norms") {
  std::mt19937_64 rng(3);
  AttackSpec spec;
  spec.family = AttackFamily::kRandom;
  spec.epsilon = 0.25;
  std::vector<double> s{0.5, -1.0, 2.0};

  spec.norm_p = NormP::kLinf;
  double max_linf = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const std::vector<double> sh = random_attack(s, spec, rng);
    for (std::size_t j = 0; j < s.size(); ++j) {
      max_linf = std::max(max_linf, std::fabs(sh[j] - s[j]));
    }
  }
  CHECK(max_linf <= spec.epsilon);
  CHECK(max_linf > 0.9 * spec.epsilon);  // the box is actually filled

  spec.norm_p = NormP::kL2;
  double max_l2 = 0.0, acc_sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> sh = random_attack(s, spec, rng);
    double sq = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double d = sh[j] - s[j];
      sq += d * d;
    }
    max_l2 = std::max(max_l2, std::sqrt(sq));
    acc_sq += sq;
  }
  CHECK(max_l2 <= spec.epsilon + 1e-12);
  const double expected = numcheck::uniform_ball_mean_square_radius(3, spec.epsilon);
  CHECK(acc_sq / n == doctest::Approx(expected).epsilon(0.02));

  spec.epsilon = 0.0;
  CHECK(random_attack(s, spec, rng) == s);
}

TEST_CASE("mad attack: budget, zero-eps identity, and the rank-1 closed form") {
  std::mt19937_64 rng(5);
  AttackSpec spec;
  spec.family = AttackFamily::kMad;
  spec.epsilon = 0.0;
  PolicyNetwork net = linear_gaussian(Matrix{{1.0, -2.0}}, 0.5);
  std::vector<double> s{0.3, 0.4};
  CHECK(mad_attack(net, s, spec, rng) == s);

  spec.epsilon = 0.1;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng() % 6;
    Matrix w(1, d);
    std::vector<double> wv(d);
    for (std::size_t j = 0; j < d; ++j) {
      wv[j] = uniform_range(rng, -2.0, 2.0);
      w.data[j] = wv[j];
    }
    const double sigma = uniform_range(rng, 0.1, 1.0);
    PolicyNetwork lin = linear_gaussian(w, sigma);
    std::vector<double> state(d);
    for (double& v : state) v = uniform_range(rng, -1.0, 1.0);
    const std::vector<double> sh = mad_attack(lin, state, spec, rng);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(std::fabs(sh[j] - state[j]) <= spec.epsilon + 1e-12);
    }
    const double achieved = kl(forward(lin, state).dist, forward(lin, sh).dist);
    const double optimum = numcheck::rank1_linear_kl_max(wv, sigma, spec.epsilon);
    CHECK(achieved >= 0.95 * optimum);
  }
}

TEST_CASE("mad beats random on achieved kl in expectation") {
  std::mt19937_64 rng(7);
  std::vector<std::size_t> hidden{8};
  PolicyNetwork net = make_mlp_policy(3, 2, hidden, Activation::kTanh,
                                      HeadFamily::kGaussian, 0.1, rng);
  for (DenseLayer& l : net.actor) {
    for (double& v : l.w.data) v *= 10.0;  // give the policy real curvature
  }
  AttackSpec spec;
  spec.epsilon = 0.1;
  double kl_mad = 0.0, kl_rand = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> s(3);
    for (double& v : s) v = uniform_range(rng, -1.0, 1.0);
    const ActionDistribution clean = forward(net, s).dist;
    kl_mad += kl(clean, forward(net, mad_attack(net, s, spec, rng)).dist);
    kl_rand += kl(clean, forward(net, random_attack(s, spec, rng)).dist);
  }
  CHECK(kl_mad > kl_rand);
}

TEST_CASE("value attack: linear critic closed form and monotone best iterate") {
  AttackSpec spec;
  spec.epsilon = 0.2;
  spec.pgd_step_size = 0.25;  // one step saturates the box
  PolicyNetwork net = linear_gaussian(Matrix{{1.0, 1.0, 1.0}}, 0.5);
  net.critic[0].w = Matrix{{2.0, -1.0, 0.5}};
  std::vector<double> s{0.1, 0.2, 0.3};
  const std::vector<double> sh = value_attack(net, s, spec);
  CHECK(sh[0] == doctest::Approx(s[0] - 0.2));
  CHECK(sh[1] == doctest::Approx(s[1] + 0.2));
  CHECK(sh[2] == doctest::Approx(s[2] - 0.2));

  std::mt19937_64 rng(9);
  std::vector<std::size_t> hidden{6};
  PolicyNetwork mlp = make_mlp_policy(3, 2, hidden, Activation::kTanh,
                                      HeadFamily::kGaussian, 0.1, rng);
  spec.pgd_step_size = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> state(3);
    for (double& v : state) v = uniform_range(rng, -1.0, 1.0);
    const std::vector<double> adv = value_attack(mlp, state, spec);
    CHECK(value_forward(mlp, adv) <= value_forward(mlp, state) + 1e-12);
  }

  spec.epsilon = 0.0;
  CHECK(value_attack(mlp, s, spec) == s);
}

TEST_CASE("robust sarsa: plain TD fit matches the policy-evaluation oracle") {
  ChainEnv env;
  // uniform victim policy over the two actions
  PolicyNetwork victim;
  DenseLayer l;
  l.w = Matrix::zeros(2, 2);
  l.b = {0.0, 0.0};
  l.act = Activation::kIdentity;
  victim.actor = {l};
  DenseLayer c;
  c.w = Matrix::zeros(1, 2);
  c.b = {0.0};
  c.act = Activation::kIdentity;
  victim.critic = {c};
  victim.head = HeadFamily::kCategorical;

  AttackSpec spec;
  spec.epsilon = 0.1;
  spec.rs.robust_perturb_scale = 0.0;  // plain TD
  spec.rs.buffer_transitions = 8192;
  spec.rs.td_epochs = 60;
  spec.rs.q_hidden = 16;
  spec.rs.lr = 3e-3;
  const double gamma = 0.5;
  std::mt19937_64 rng(11);
  const QModel q = fit_robust_q(victim, env, spec, gamma, rng);

  numcheck::TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 2;
  mdp.transitions.resize(2);
  for (std::size_t s = 0; s < 2; ++s) {
    mdp.transitions[s].resize(2);
    for (std::size_t a = 0; a < 2; ++a) {
      const std::size_t next = a == 0 ? s : 1 - s;
      mdp.transitions[s][a] = {{1.0, next, next == 1 ? 1.0 : 0.0}};
    }
  }
  Matrix pi(2, 2);
  pi.data = {0.5, 0.5, 0.5, 0.5};
  const Matrix oracle = numcheck::policy_q(mdp, pi, gamma);
  double qmax = 0.0;
  for (double v : oracle.data) qmax = std::max(qmax, std::fabs(v));
  for (std::size_t s = 0; s < 2; ++s) {
    const std::vector<double> obs =
        s == 0 ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0};
    const std::vector<double> fitted = q.q_discrete(obs);
    for (std::size_t a = 0; a < 2; ++a) {
      INFO("state ", s, " action ", a, " fitted ", fitted[a], " oracle ", oracle(s, a));
      CHECK(std::fabs(fitted[a] - oracle(s, a)) <= 0.05 * qmax);
    }
  }
}

TEST_CASE("robust sarsa phase 2 matches the linear corner solution") {
  // Q(s, a) = q_s . s + q_a . a, victim mean = W s_hat: the objective is
  // linear in s_hat, minimized at s - eps*sign(W^T q_a).
  QModel q;
  q.discrete = false;
  q.obs_dim = 2;
  q.act_dim = 1;
  DenseLayer ql;
  ql.w = Matrix{{0.3, -0.7, 2.0}};  // [q_s | q_a]
  ql.b = {0.0};
  ql.act = Activation::kIdentity;
  q.layers = {ql};

  PolicyNetwork victim = linear_gaussian(Matrix{{1.0, -0.5}}, 0.5);
  AttackSpec spec;
  spec.epsilon = 0.15;
  spec.pgd_step_size = 0.2;
  std::vector<double> s{0.4, 0.4};
  const std::vector<double> sh = rs_attack(victim, q, s, spec);
  // grad of q_a * (w . s_hat) w.r.t. s_hat = q_a * w = 2*(1, -0.5)
  CHECK(sh[0] == doctest::Approx(s[0] - spec.epsilon));
  CHECK(sh[1] == doctest::Approx(s[1] + spec.epsilon));
}

TEST_CASE("learned adversary continuous step: budget, mask, stealth") {
  std::mt19937_64 rng(13);
  std::vector<std::size_t> hidden{8};
  AdversaryNet adv = make_gaussian_adversary(3, hidden, Activation::kTanh, rng);
  AttackSpec spec;
  spec.epsilon = 0.2;
  std::vector<double> s{0.5, -0.5, 1.0};

  spec.attack_rate = 0.0;  // mask never fires
  const LearnedStepResult off = learned_adversary_step(adv, s, spec, rng);
  CHECK(off.s_hat == s);
  CHECK(off.stealth == 0.0);
  CHECK_FALSE(off.mask_on);

  spec.attack_rate = 1.0;
  for (int i = 0; i < 2000; ++i) {
    const LearnedStepResult on = learned_adversary_step(adv, s, spec, rng);
    CHECK(on.mask_on);
    double sq = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double d = on.s_hat[j] - s[j];
      CHECK(std::fabs(d) <= spec.epsilon + 1e-12);
      sq += d * d;
    }
    CHECK(on.stealth == doctest::Approx(std::sqrt(sq)));
    CHECK(std::isfinite(on.logp_delta));
    CHECK(on.logp_mask == 0.0);  // certain mask
  }
}

TEST_CASE("learned adversary categorical step keeps observations valid") {
  std::mt19937_64 rng(17);
  GridWorldParams p;
  auto env = make_gridworld(p);
  std::vector<std::size_t> hidden{16};
  AdversaryNet adv = make_categorical_adversary(
      env->spec().obs_dim, env->spec().tile_count, env->spec().tile_blocks, hidden,
      Activation::kTanh, rng);
  AttackSpec spec;
  spec.attack_rate = 1.0;
  std::vector<double> state = env->reset(rng);
  const std::vector<double> obs = env->observe(state);
  for (int i = 0; i < 500; ++i) {
    const LearnedStepResult step = learned_adversary_step(adv, obs, spec, rng);
    std::size_t hamming = 0;
    for (std::size_t tile = 0; tile < adv.tiles; ++tile) {
      double acc = 0.0;
      bool changed = false;
      for (std::size_t b = 0; b < adv.blocks; ++b) {
        const double v = step.s_hat[tile * adv.blocks + b];
        CHECK((v == 0.0 || v == 1.0));
        acc += v;
        if (v != obs[tile * adv.blocks + b]) changed = true;
      }
      CHECK(acc == 1.0);
      hamming += changed ? 1 : 0;
    }
    CHECK(step.stealth == doctest::Approx(static_cast<double>(hamming)));
  }
}

TEST_CASE("zero-capacity adversary leaves the victim untouched") {
  std::mt19937_64 rng(19);
  std::vector<std::size_t> hidden{6};
  AdversaryNet adv = make_gaussian_adversary(4, hidden, Activation::kTanh, rng);
  for (DenseLayer& l : adv.trunk) {
    std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  auto zero = [](DenseLayer& l) {
    std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  };
  zero(adv.head_mu);
  // log sigma head all-zero gives sigma = 1 clamped to eps; drive it tiny
  zero(adv.head_logsigma);
  std::fill(adv.head_logsigma.b.begin(), adv.head_logsigma.b.end(), -40.0);
  AttackSpec spec;
  spec.epsilon = 0.1;
  spec.attack_rate = 1.0;
  std::vector<double> s{0.4, -0.2, 0.0, 0.9};
  for (int i = 0; i < 100; ++i) {
    const LearnedStepResult step = learned_adversary_step(adv, s, spec, rng);
    for (std::size_t j = 0; j < s.size(); ++j) {
      CHECK(step.s_hat[j] == doctest::Approx(s[j]).epsilon(1e-3));
    }
  }
}

TEST_CASE("evaluate: determinism, ci math, single-episode convention") {
  std::mt19937_64 rng(23);
  std::vector<std::size_t> hidden{6};
  PolicyNetwork net = make_mlp_policy(4, 2, hidden, Activation::kTanh,
                                      HeadFamily::kGaussian, 0.1, rng);
  auto env = make_point_mass();
  std::mt19937_64 e1(7), e2(7);
  const EvalResult a = evaluate(net, *env, nullptr, 5, e1);
  const EvalResult b = evaluate(net, *env, nullptr, 5, e2);
  CHECK(a.per_episode == b.per_episode);
  REQUIRE(a.sem.has_value());
  // ci95 = 1.96 * sem with the n-1 std
  double mean = 0.0;
  for (double r : a.per_episode) mean += r / 5.0;
  double var = 0.0;
  for (double r : a.per_episode) var += (r - mean) * (r - mean);
  const double sem = std::sqrt(var / 4.0) / std::sqrt(5.0);
  CHECK(*a.sem == doctest::Approx(sem));
  CHECK(*a.ci95 == doctest::Approx(1.96 * sem));

  std::mt19937_64 e3(7);
  const EvalResult single = evaluate(net, *env, nullptr, 1, e3);
  CHECK_FALSE(single.sem.has_value());
  CHECK_FALSE(single.ci95.has_value());

  // no-op attack reports zero empirical F
  AttackSpec spec;
  spec.family = AttackFamily::kNone;
  std::mt19937_64 setup(1), e4(7);
  auto attack = make_attack(spec, net, *env, 0.99, setup);
  const EvalResult clean = evaluate(net, *env, attack.get(), 3, e4);
  CHECK(clean.f_hat == 0.0);
}

TEST_CASE("evaluating a linear PD policy reproduces the scripted oracle return") {
  // the point-mass scripted controller is linear: a = clip(-4 pos - 4 vel)
  PolicyNetwork pd = linear_gaussian(
      Matrix{{-4.0, 0.0, -4.0, 0.0}, {0.0, -4.0, 0.0, -4.0}}, 1e-9);
  auto env = make_point_mass();
  std::mt19937_64 e1(5), e2(6);
  const EvalResult via_eval = evaluate(pd, *env, nullptr, 200, e1);
  const ReturnStats oracle = scripted_policy_return(*env, 200, e2);
  CHECK(via_eval.mean == doctest::Approx(oracle.mean).epsilon(0.15));
}

TEST_CASE("a trained adversary hurts more than the random attack at equal budget") {
  auto env = make_point_mass();
  PpoConfig vcfg;
  vcfg.total_steps = 100000;
  vcfg.num_envs = 16;
  vcfg.rollout_len = 128;
  vcfg.update_epochs = 4;
  vcfg.minibatches = 32;
  vcfg.hidden_sizes = {64, 64};
  vcfg.learning_rate = 1e-3;
  vcfg.sigma = 0.3;
  vcfg.seed = 0;
  PruneConfig pcfg;
  const TrainResult victim = train_ppo(*env, vcfg, pcfg);

  AttackSpec spec;
  spec.family = AttackFamily::kLearned;
  spec.epsilon = 0.075;
  spec.attack_rate = 1.0;
  spec.lambda_stealth = 0.1;
  PpoConfig acfg;
  acfg.total_steps = 49152;
  acfg.num_envs = 8;
  acfg.rollout_len = 64;
  acfg.update_epochs = 4;
  acfg.minibatches = 8;
  acfg.hidden_sizes = {32};
  acfg.entropy_coef = 0.0;
  acfg.learning_rate = 1e-3;
  acfg.seed = 1;
  AdversaryTrainResult adv = train_adversary(victim.net, *env, spec, acfg);
  AttackSpec eval_spec = spec;
  eval_spec.adversary = std::make_shared<AdversaryNet>(std::move(adv.net));
  AttackSpec random_spec;
  random_spec.family = AttackFamily::kRandom;
  random_spec.epsilon = 0.075;

  std::mt19937_64 setup(2), e1(3), e2(4);
  auto learned = make_attack(eval_spec, victim.net, *env, vcfg.gamma, setup);
  auto rnd = make_attack(random_spec, victim.net, *env, vcfg.gamma, setup);
  const EvalResult lres = evaluate(victim.net, *env, learned.get(), 100, e1);
  const EvalResult rres = evaluate(victim.net, *env, rnd.get(), 100, e2);
  REQUIRE(lres.ci95.has_value());
  REQUIRE(rres.ci95.has_value());
  CHECK(lres.mean + *lres.ci95 < rres.mean - *rres.ci95);
}

TEST_CASE("evaluate requires at least one episode") {
  std::mt19937_64 rng(31);
  std::vector<std::size_t> hidden{4};
  PolicyNetwork net = make_mlp_policy(4, 2, hidden, Activation::kTanh,
                                      HeadFamily::kGaussian, 0.1, rng);
  auto env = make_point_mass();
  std::mt19937_64 erng(1);
  CHECK_THROWS_AS(evaluate(net, *env, nullptr, 0, erng), std::invalid_argument);
}

TEST_CASE("attack evaluation feeds a positive empirical F for real attacks") {
  std::mt19937_64 rng(29);
  std::vector<std::size_t> hidden{6};
  PolicyNetwork net = make_mlp_policy(4, 2, hidden, Activation::kTanh,
                                      HeadFamily::kGaussian, 0.1, rng);
  auto env = make_point_mass();
  AttackSpec spec;
  spec.family = AttackFamily::kRandom;
  spec.epsilon = 0.075;
  std::mt19937_64 setup(1), erng(7);
  auto attack = make_attack(spec, net, *env, 0.99, setup);
  const EvalResult res = evaluate(net, *env, attack.get(), 3, erng);
  CHECK(res.f_hat > 0.0);
  CHECK(res.f_hat <= 1.0);
  CHECK(res.mean_delta_l2 > 0.0);
}
