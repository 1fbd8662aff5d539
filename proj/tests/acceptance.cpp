// Acceptance suite: one pass/fail line per criterion, every tolerance pinned
// in code. Run everything or a single criterion with --criterion N.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "prunecert/attack.hpp"
#include "prunecert/cert.hpp"
#include "prunecert/csv.hpp"
#include "prunecert/distributions.hpp"
#include "prunecert/envs.hpp"
#include "prunecert/harness.hpp"
#include "prunecert/numcheck.hpp"
#include "prunecert/policy.hpp"
#include "prunecert/prune.hpp"
#include "prunecert/rl.hpp"
#include "prunecert/rng.hpp"

using namespace prunecert;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

PolicyNetwork random_policy_net(std::mt19937_64& rng, std::size_t in, std::size_t out,
                                std::size_t n_layers, HeadFamily head,
                                double weight_scale = 1.5) {
  std::vector<std::size_t> hidden;
  for (std::size_t l = 0; l + 1 < n_layers; ++l) hidden.push_back(2 + rng() % 6);
  const Activation acts[] = {Activation::kTanh, Activation::kRelu,
                             Activation::kIdentity};
  const Activation act = acts[rng() % 3];
  PolicyNetwork net = make_mlp_policy(in, out, hidden, act, head,
                                      head == HeadFamily::kGaussian ? 0.4 : 0.1, rng);
  for (DenseLayer& l : net.actor) {
    for (double& v : l.w.data) v = uniform_range(rng, -weight_scale, weight_scale);
  }
  return net;
}

// ---------------------------------------------------------------------------
// criterion 1: exact pruning monotonicity of the surrogate bound over 10^4
// (network, mask) pairs
Outcome criterion_monotonicity() {
  std::mt19937_64 rng(101);
  const auto start = std::chrono::steady_clock::now();
  std::size_t violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n_layers = 1 + rng() % 4;
    PolicyNetwork net =
        random_policy_net(rng, 2 + rng() % 5, 2 + rng() % 4, n_layers,
                          HeadFamily::kGaussian, uniform_range(rng, 0.5, 3.0));
    PolicyNetwork masked = net;
    for (DenseLayer& l : masked.actor) {
      for (double& v : l.w.data) {
        if (uniform01(rng) < uniform_range(rng, 0.1, 0.9)) v = 0.0;
      }
    }
    if (surrogate_lipschitz(masked) > surrogate_lipschitz(net)) ++violations;
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start)
                          .count();
  Outcome out;
  out.passed = violations == 0 && secs < 30.0;
  std::ostringstream ss;
  ss << "violations=" << violations << " over 10000 pairs, " << secs << "s";
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 2: Gaussian bound soundness with slack reporting
Outcome criterion_gaussian_soundness() {
  std::mt19937_64 rng(202);
  const auto start = std::chrono::steady_clock::now();
  std::size_t violations = 0, quadrature_checks = 0, checks = 0;
  double min_slack = 1e300, max_quad_gap = 0.0;
  for (int n = 0; n < 1000; ++n) {
    PolicyNetwork net = random_policy_net(rng, 3, 2, 1 + rng() % 3,
                                          HeadFamily::kGaussian);
    const double lip = surrogate_lipschitz(net);
    const double c = gaussian_c(net.sigma);
    const double eps = std::pow(10.0, uniform_range(rng, -2.0, 0.0));
    for (int si = 0; si < 10; ++si) {
      std::vector<double> s(3);
      for (double& v : s) v = uniform_range(rng, -1.5, 1.5);
      const ActionDistribution p = forward(net, s).dist;
      for (int pi = 0; pi < 10; ++pi) {
        std::vector<double> dir(3);
        double norm = 0.0;
        for (double& v : dir) {
          v = gauss(rng);
          norm += v * v;
        }
        norm = std::sqrt(norm);
        const double radius = eps * uniform01(rng);
        std::vector<double> sh = s;
        for (std::size_t j = 0; j < 3; ++j) sh[j] += radius * dir[j] / norm;
        const ActionDistribution q = forward(net, sh).dist;
        const double tv = tv_exact(p, q);
        const double bound = c * lip * radius;
        ++checks;
        if (tv > bound) ++violations;
        min_slack = std::min(min_slack, bound - tv);
        if (checks % 500 == 0) {
          // independent quadrature oracle spot-check of the closed form
          const double oracle = numcheck::mc_tv(p, q).value;
          max_quad_gap = std::max(max_quad_gap, std::fabs(oracle - tv));
          ++quadrature_checks;
          if (oracle > bound + 1e-6) ++violations;
        }
      }
    }
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start)
                          .count();
  Outcome out;
  out.passed = violations == 0 && secs < 60.0 && max_quad_gap < 1e-5;
  std::ostringstream ss;
  ss << "violations=" << violations << "/" << checks << ", min slack "
     << format_double(min_slack) << ", quadrature spot-checks " << quadrature_checks
     << " (max gap " << format_double(max_quad_gap) << "), " << secs << "s";
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 3: categorical constant audit
Outcome criterion_categorical_audit() {
  Outcome out;
  const auto p = ActionDistribution::categorical({1.0, 0.0});
  const auto q = ActionDistribution::categorical({0.0, 1.0});
  const double tv = tv_exact(p, q);
  const double expected = std::tanh(0.5);  // 0.46211715726...
  const bool counterexample =
      std::fabs(tv - expected) < 1e-9 && tv > 0.25 * std::sqrt(2.0);

  std::mt19937_64 rng(303);
  std::size_t violations = 0;
  const double c_ver = categorical_c_verified();
  for (int trial = 0; trial < 100000; ++trial) {
    const std::size_t k = 2 + rng() % 9;
    std::vector<double> z1(k), z2(k);
    for (std::size_t i = 0; i < k; ++i) {
      z1[i] = uniform_range(rng, -6.0, 6.0);
      z2[i] = uniform_range(rng, -6.0, 6.0);
    }
    const auto a = ActionDistribution::categorical(z1);
    const auto b = ActionDistribution::categorical(z2);
    double dz = 0.0;
    for (std::size_t i = 0; i < k; ++i) dz += (z1[i] - z2[i]) * (z1[i] - z2[i]);
    if (tv_exact(a, b) > c_ver * std::sqrt(dz)) ++violations;
  }
  out.passed = counterexample && violations == 0;
  std::ostringstream ss;
  ss << "counterexample tv=" << format_double(tv) << " > 0.25*sqrt(2)="
     << format_double(0.25 * std::sqrt(2.0)) << " [" << (counterexample ? "yes" : "no")
     << "], verified-constant violations=" << violations << "/100000";
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 4: local jacobian norm under the surrogate lipschitz (relu nets)
Outcome criterion_local_vs_global() {
  std::mt19937_64 rng(404);
  std::size_t violations = 0;
  double worst_margin = 1e300;
  for (int n = 0; n < 1000; ++n) {
    std::vector<std::size_t> hidden;
    const std::size_t n_layers = 1 + rng() % 4;
    for (std::size_t l = 0; l + 1 < n_layers; ++l) hidden.push_back(2 + rng() % 6);
    PolicyNetwork net = make_mlp_policy(4, 2, hidden, Activation::kRelu,
                                        HeadFamily::kGaussian, 0.2, rng);
    for (DenseLayer& l : net.actor) {
      for (double& v : l.w.data) v = uniform_range(rng, -1.5, 1.5);
    }
    const double lip = surrogate_lipschitz(net);
    for (int si = 0; si < 10; ++si) {
      std::vector<double> s(4);
      for (double& v : s) v = uniform_range(rng, -2.0, 2.0);
      const double op = spectral_norm(input_jacobian(net, s)).value;
      if (op > lip + 1e-9) ++violations;
      worst_margin = std::min(worst_margin, lip - op);
    }
  }
  Outcome out;
  out.passed = violations == 0;
  std::ostringstream ss;
  ss << "violations=" << violations << "/10000, min (lipschitz - ||J||) = "
     << format_double(worst_margin);
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 5: reverse-mode vs finite differences on PPO losses
Outcome criterion_gradient_correctness() {
  std::mt19937_64 rng(505);
  std::size_t failures = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t in = 3, adim = 2, hid = 4, nb = 6;
    std::vector<std::size_t> hidden{hid};
    PolicyNetwork net = make_mlp_policy(in, adim, hidden, Activation::kTanh,
                                        HeadFamily::kGaussian, 0.3, rng);
    // synthetic minibatch, kept away from the clip kinks
    Matrix obs(nb, in);
    for (double& v : obs.data) v = uniform_range(rng, -1.0, 1.0);
    std::vector<std::vector<double>> actions(nb, std::vector<double>(adim));
    std::vector<double> old_logp(nb), adv(nb), ret(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      std::vector<double> row(obs.data.begin() + i * in, obs.data.begin() + (i + 1) * in);
      const ActionDistribution d = forward(net, row).dist;
      for (std::size_t j = 0; j < adim; ++j) {
        actions[i][j] = d.mean[j] + 0.3 * d.std[j] * gauss(rng);
      }
      old_logp[i] =
          log_prob(d, std::span<const double>(actions[i])) + uniform_range(rng, -0.05, 0.05);
      adv[i] = uniform_range(rng, 0.2, 1.0) * (rng() % 2 ? 1.0 : -1.0);
      ret[i] = uniform_range(rng, -1.0, 1.0);
    }
    PpoConfig cfg;
    cfg.clip_epsilon = 0.2;
    cfg.entropy_coef = 0.01;
    cfg.value_coef = 0.5;

    auto loss_of = [&](const PolicyNetwork& candidate) {
      Tape tape;
      const TrunkLeaves aw = register_trunk_leaves(tape, candidate.actor);
      const TrunkLeaves cw = register_trunk_leaves(tape, candidate.critic);
      Tape::Id obs_node = tape.constant(obs);
      Tape::Id g = trunk_forward_with_leaves(tape, candidate.actor, obs_node, aw);
      Tape::Id v = trunk_forward_with_leaves(tape, candidate.critic, obs_node, cw);
      Matrix act(nb, adim);
      for (std::size_t i = 0; i < nb; ++i) {
        for (std::size_t j = 0; j < adim; ++j) act(i, j) = actions[i][j];
      }
      std::vector<double> inv2s2(adim);
      double logp_c = 0.0;
      constexpr double kLog2Pi = 1.8378770664093453;
      for (std::size_t j = 0; j < adim; ++j) {
        inv2s2[j] = 1.0 / (2.0 * candidate.sigma[j] * candidate.sigma[j]);
        logp_c += -std::log(candidate.sigma[j]) - 0.5 * kLog2Pi;
      }
      Tape::Id diff = tape.sub(tape.constant(act), g);
      Tape::Id quad = tape.row_sum(tape.mul_row_const(tape.square(diff), inv2s2));
      Tape::Id logp = tape.add_scalar(tape.scale(quad, -1.0), logp_c);
      Tape::Id ent = tape.constant(Matrix(1, 1, {0.37}));
      const PpoLossNodes nodes = build_ppo_loss(tape, logp, v, ent, old_logp, adv, ret, cfg);
      return std::pair<Tape, PpoLossNodes>{std::move(tape), nodes};
    };

    // ratio-kink guard: resample when any ratio is near the clip boundary
    {
      auto [tape, nodes] = loss_of(net);
      (void)nodes;
      bool near_kink = false;
      for (std::size_t i = 0; i < nb; ++i) {
        std::vector<double> row(obs.data.begin() + i * in,
                                obs.data.begin() + (i + 1) * in);
        const double lp =
            log_prob(forward(net, row).dist, std::span<const double>(actions[i]));
        const double ratio = std::exp(lp - old_logp[i]);
        if (std::fabs(ratio - 1.2) < 5e-3 || std::fabs(ratio - 0.8) < 5e-3) {
          near_kink = true;
        }
      }
      if (near_kink) {
        --trial;
        continue;
      }
    }

    auto [tape, nodes] = loss_of(net);
    tape.backward(nodes.total);
    // parameter leaves sit at the front of the tape in actor-then-critic
    // (w, b) order, matching the flattened parameter vector below
    std::vector<double> analytic;
    std::size_t leaf_id = 0;
    for (std::size_t l = 0; l < net.actor.size(); ++l) {
      for (double g : tape.grad(leaf_id).data) analytic.push_back(g);
      ++leaf_id;
      for (double g : tape.grad(leaf_id).data) analytic.push_back(g);
      ++leaf_id;
    }
    for (std::size_t l = 0; l < net.critic.size(); ++l) {
      for (double g : tape.grad(leaf_id).data) analytic.push_back(g);
      ++leaf_id;
      for (double g : tape.grad(leaf_id).data) analytic.push_back(g);
      ++leaf_id;
    }

    // finite differences over every parameter
    auto param_vector = [&](const PolicyNetwork& candidate) {
      std::vector<double> v;
      for (const DenseLayer& l : candidate.actor) {
        v.insert(v.end(), l.w.data.begin(), l.w.data.end());
        v.insert(v.end(), l.b.begin(), l.b.end());
      }
      for (const DenseLayer& l : candidate.critic) {
        v.insert(v.end(), l.w.data.begin(), l.w.data.end());
        v.insert(v.end(), l.b.begin(), l.b.end());
      }
      return v;
    };
    auto net_from = [&](std::span<const double> flat) {
      PolicyNetwork candidate = net;
      std::size_t k = 0;
      for (DenseLayer& l : candidate.actor) {
        for (double& v : l.w.data) v = flat[k++];
        for (double& v : l.b) v = flat[k++];
      }
      for (DenseLayer& l : candidate.critic) {
        for (double& v : l.w.data) v = flat[k++];
        for (double& v : l.b) v = flat[k++];
      }
      return candidate;
    };
    const std::vector<double> params = param_vector(net);
    auto f = [&](std::span<const double> flat) {
      auto [t, n2] = loss_of(net_from(flat));
      return t.scalar(n2.total);
    };
    const std::vector<double> fd = numcheck::finite_diff_grad(f, params, 1e-6);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double err = std::fabs(analytic[i] - fd[i]) / std::max(1.0, std::fabs(fd[i]));
      worst = std::max(worst, err);
      if (err >= 1e-4) ++failures;
    }
  }
  Outcome out;
  out.passed = failures == 0;
  std::ostringstream ss;
  ss << "coordinate failures=" << failures << ", worst relative error "
     << format_double(worst);
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 6: Pinsker consistency on both families
Outcome criterion_pinsker() {
  std::mt19937_64 rng(606);
  std::size_t violations = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    if (trial % 2 == 0) {
      const std::size_t d = 1 + rng() % 4;
      std::vector<double> m1(d), m2(d), sd(d);
      for (std::size_t i = 0; i < d; ++i) {
        m1[i] = uniform_range(rng, -3.0, 3.0);
        m2[i] = uniform_range(rng, -3.0, 3.0);
        sd[i] = uniform_range(rng, 0.05, 2.0);
      }
      const auto p = ActionDistribution::gaussian(m1, sd);
      const auto q = ActionDistribution::gaussian(m2, sd);
      if (tv_exact(p, q) > std::sqrt(kl(p, q) / 2.0) + 1e-12) ++violations;
    } else {
      const std::size_t k = 2 + rng() % 8;
      std::vector<double> z1(k), z2(k);
      for (std::size_t i = 0; i < k; ++i) {
        z1[i] = uniform_range(rng, -6.0, 6.0);
        z2[i] = uniform_range(rng, -6.0, 6.0);
      }
      const auto p = ActionDistribution::categorical(z1);
      const auto q = ActionDistribution::categorical(z2);
      if (tv_exact(p, q) > std::sqrt(kl(p, q) / 2.0) + 1e-12) ++violations;
    }
  }
  Outcome out;
  out.passed = violations == 0;
  out.detail = "violations=" + std::to_string(violations) + "/100000";
  return out;
}

// ---------------------------------------------------------------------------
// criterion 7: schedules and ERK
Outcome criterion_schedules_erk() {
  std::ostringstream ss;
  bool ok = true;

  // cubic hand value, exact
  const double cubic = scheduled_sparsity(PruneSchedule::kCubic, 625, 1000, 0.25, 0.9);
  if (cubic != 0.7875) {
    ok = false;
    ss << "cubic(0.625)=" << format_double(cubic) << " != 0.7875; ";
  }

  // realized == scheduled within one parameter at every event of a real run
  auto env = make_point_mass();
  PpoConfig cfg;
  cfg.total_steps = 4096;
  cfg.num_envs = 4;
  cfg.rollout_len = 32;
  cfg.update_epochs = 2;
  cfg.minibatches = 4;
  cfg.hidden_sizes = {8, 8};
  cfg.seed = 7;
  PruneConfig pcfg;
  pcfg.criterion = PruneCriterion::kMagnitude;
  pcfg.target_sparsity = 0.7;
  pcfg.schedule = PruneSchedule::kCubic;
  pcfg.burn_in_fraction = 0.25;
  pcfg.update_interval = 3;
  const TrainResult run = train_ppo(*env, cfg, pcfg);
  std::size_t schedule_violations = 0;
  for (const PruneEventRecord& ev : run.prune_events) {
    const double gap = std::fabs(ev.sparsity_realized - ev.sparsity_scheduled) *
                       static_cast<double>(ev.prunable_params);
    if (gap > 1.0 + 1e-9) ++schedule_violations;
  }
  if (run.prune_events.empty() || schedule_violations > 0) {
    ok = false;
    ss << "schedule violations=" << schedule_violations << " of "
       << run.prune_events.size() << " events; ";
  } else {
    ss << run.prune_events.size() << " prune events within one parameter; ";
  }

  // ERK ordering on 100 random square-layer stacks, the regime where the
  // larger-is-sparser claim is exact
  std::mt19937_64 rng(707);
  std::size_t erk_violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n_layers = 2 + rng() % 4;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const std::size_t h = 4 + rng() % 61;
      shapes.emplace_back(h, h);
    }
    const double target = uniform_range(rng, 0.05, 0.9);
    const std::vector<double> sp = erk_layer_sparsities(shapes, target);
    for (std::size_t a = 0; a < n_layers; ++a) {
      for (std::size_t b = 0; b < n_layers; ++b) {
        const std::size_t na = shapes[a].first * shapes[a].second;
        const std::size_t nb = shapes[b].first * shapes[b].second;
        if (na > nb && sp[a] < sp[b] - 1e-12) ++erk_violations;
      }
    }
  }
  if (erk_violations > 0) {
    ok = false;
    ss << "erk ordering violations=" << erk_violations << "; ";
  }
  ss << "erk ordering ok over 100 shape sets";

  Outcome out;
  out.passed = ok;
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// shared training helper for criteria 8, 9, 11, 12: desk-scale settings with
// a wide exploration std and a fast learning rate
PpoConfig point_mass_train_config(std::uint64_t seed, std::size_t total_steps) {
  PpoConfig cfg;
  cfg.total_steps = total_steps;
  cfg.num_envs = 16;
  cfg.rollout_len = 128;
  cfg.update_epochs = 4;
  cfg.minibatches = 32;
  cfg.hidden_sizes = {64, 64};
  cfg.learning_rate = 1e-3;
  cfg.sigma = 0.3;
  cfg.seed = seed;
  cfg.epsilon = 0.075;
  return cfg;
}

// criterion 8: PPO reaches the oracle midpoint on every seed
Outcome criterion_ppo_learns() {
  auto env = make_point_mass();
  std::mt19937_64 oracle_rng(808);
  const ReturnStats scripted = scripted_policy_return(*env, 500, oracle_rng);
  const ReturnStats random = random_policy_return(*env, 500, oracle_rng);
  const double threshold = 0.5 * (scripted.mean + random.mean);

  std::ostringstream ss;
  ss << "scripted " << format_double(scripted.mean) << ", random "
     << format_double(random.mean) << ", threshold " << format_double(threshold)
     << "; ";
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto start = std::chrono::steady_clock::now();
    const PpoConfig cfg = point_mass_train_config(seed, 200000);
    PruneConfig pcfg;  // no pruning, kappa defaults to 0
    const TrainResult run = train_ppo(*env, cfg, pcfg);
    std::mt19937_64 eval_rng(derive_seed(seed, 42));
    const EvalResult eval = evaluate(run.net, *env, nullptr, 100, eval_rng);
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
    ss << "seed " << seed << ": return " << format_double(eval.mean) << " ("
       << static_cast<int>(secs) << "s) ";
    if (!(eval.mean >= threshold) || secs >= 600.0) ok = false;
  }
  Outcome out;
  out.passed = ok;
  out.detail = ss.str();
  return out;
}

// criterion 9: clean > random > mad with non-overlapping pooled 95% CIs.
// Victims are trained in two phases (explore wide, then sharpen at a small
// action std) so the attack effects are not buried in action noise.
Outcome criterion_attack_ordering() {
  auto env = make_point_mass();
  std::vector<double> clean_eps, random_eps, mad_eps;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const PpoConfig cfg = point_mass_train_config(seed, 150000);
    PruneConfig pcfg;
    const TrainResult phase1 = train_ppo(*env, cfg, pcfg);
    PpoConfig sharpen = cfg;
    sharpen.sigma = 0.1;
    sharpen.seed = seed + 1000;
    PolicyNetwork warm = phase1.net;
    warm.sigma.assign(warm.sigma.size(), 0.1);
    const TrainResult run = train_ppo_from(std::move(warm), *env, sharpen, pcfg);

    AttackSpec random_spec;
    random_spec.family = AttackFamily::kRandom;
    random_spec.epsilon = 0.075;
    AttackSpec mad_spec;
    mad_spec.family = AttackFamily::kMad;
    mad_spec.epsilon = 0.075;

    std::mt19937_64 setup(derive_seed(seed, 1));
    auto random_attacker = make_attack(random_spec, run.net, *env, cfg.gamma, setup);
    auto mad_attacker = make_attack(mad_spec, run.net, *env, cfg.gamma, setup);

    std::mt19937_64 e1(derive_seed(seed, 2)), e2(derive_seed(seed, 3)),
        e3(derive_seed(seed, 4));
    const EvalResult c = evaluate(run.net, *env, nullptr, 500, e1);
    const EvalResult r = evaluate(run.net, *env, random_attacker.get(), 500, e2);
    const EvalResult m = evaluate(run.net, *env, mad_attacker.get(), 500, e3);
    clean_eps.insert(clean_eps.end(), c.per_episode.begin(), c.per_episode.end());
    random_eps.insert(random_eps.end(), r.per_episode.begin(), r.per_episode.end());
    mad_eps.insert(mad_eps.end(), m.per_episode.begin(), m.per_episode.end());
  }
  const Aggregate ac = aggregate(clean_eps);
  const Aggregate ar = aggregate(random_eps);
  const Aggregate am = aggregate(mad_eps);
  const double c_lo = ac.mean - *ac.ci95, r_hi = ar.mean + *ar.ci95;
  const double r_lo = ar.mean - *ar.ci95, m_hi = am.mean + *am.ci95;
  Outcome out;
  out.passed = c_lo > r_hi && r_lo > m_hi;
  std::ostringstream ss;
  ss << "clean " << format_double(ac.mean) << "±" << format_double(*ac.ci95)
     << " > random " << format_double(ar.mean) << "±" << format_double(*ar.ci95)
     << " > mad " << format_double(am.mean) << "±" << format_double(*am.ci95)
     << " (2000 episodes per arm)";
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 10: SA inner solver vs the rank-1 corner optimum
Outcome criterion_sa_inner_solver() {
  std::mt19937_64 rng(1010);
  std::size_t failures = 0;
  double worst_ratio = 1.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng() % 9;
    const double sigma = uniform_range(rng, 0.05, 1.0);
    const double eps = std::pow(10.0, uniform_range(rng, -2.0, 0.0));
    PolicyNetwork net;
    DenseLayer l;
    l.w = Matrix(1, d);
    std::vector<double> w(d);
    for (std::size_t j = 0; j < d; ++j) {
      w[j] = uniform_range(rng, -2.0, 2.0);
      l.w.data[j] = w[j];
    }
    l.b = {uniform_range(rng, -0.5, 0.5)};
    l.act = Activation::kIdentity;
    net.actor = {l};
    net.head = HeadFamily::kGaussian;
    net.sigma = {sigma};
    Matrix states(1, d);
    for (double& v : states.data) v = uniform_range(rng, -1.0, 1.0);
    const double achieved = sa_regularizer_value(net, states, eps, 5, eps / 2.0);
    const double optimum = numcheck::rank1_linear_kl_max(w, sigma, eps);
    const double ratio = optimum > 0.0 ? achieved / optimum : 1.0;
    worst_ratio = std::min(worst_ratio, ratio);
    if (ratio < 0.95) ++failures;
  }
  Outcome out;
  out.passed = failures == 0;
  std::ostringstream ss;
  ss << "failures=" << failures << "/100, worst achieved/optimum "
     << format_double(worst_ratio);
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 11: learned-adversary stealth trade-off + one-hot validity.
// The pendulum at a generous budget gives the lambda grid three distinct
// regimes: spray freely, trim to what toppling needs, go quiet.
Outcome criterion_stealth_tradeoff() {
  auto env = make_pendulum();
  // one victim shared across the lambda grid
  PpoConfig victim_cfg = point_mass_train_config(0, 200000);
  PruneConfig pcfg;
  const TrainResult victim = train_ppo(*env, victim_cfg, pcfg);

  const std::vector<double> lambdas{0.1, 10.0, 1000.0};
  std::vector<double> mean_delta(lambdas.size(), 0.0);
  std::ostringstream ss;
  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    double acc = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      AttackSpec spec;
      spec.family = AttackFamily::kLearned;
      spec.epsilon = 0.15;
      spec.attack_rate = 1.0;
      spec.lambda_stealth = lambdas[li];
      PpoConfig adv_cfg;
      adv_cfg.total_steps = 98304;
      adv_cfg.num_envs = 8;
      adv_cfg.rollout_len = 64;
      adv_cfg.update_epochs = 4;
      adv_cfg.minibatches = 8;
      adv_cfg.hidden_sizes = {32};
      adv_cfg.entropy_coef = 0.0;
      adv_cfg.learning_rate = 1e-3;
      adv_cfg.lr_anneal = true;
      adv_cfg.seed = seed;
      const AdversaryTrainResult adv = train_adversary(victim.net, *env, spec, adv_cfg);
      acc += adv.final_mean_delta;
    }
    mean_delta[li] = acc / 4.0;
    ss << "lambda " << format_double(lambdas[li]) << ": mean ||delta|| "
       << format_double(mean_delta[li]) << "; ";
  }
  const bool decreasing =
      mean_delta[0] > mean_delta[1] && mean_delta[1] > mean_delta[2] &&
      mean_delta[0] > mean_delta[2];

  // categorical adversary: one-hot validity over 1e6 sampled tiles
  auto grid = make_gridworld();
  std::mt19937_64 rng(1111);
  std::vector<std::size_t> hidden{16};
  AdversaryNet cat = make_categorical_adversary(
      grid->spec().obs_dim, grid->spec().tile_count, grid->spec().tile_blocks, hidden,
      Activation::kTanh, rng);
  AttackSpec cat_spec;
  cat_spec.attack_rate = 1.0;
  std::size_t tile_samples = 0, invalid = 0;
  std::vector<double> state = grid->reset(rng);
  while (tile_samples < 1000000) {
    const std::vector<double> obs = grid->observe(state);
    const LearnedStepResult step = learned_adversary_step(cat, obs, cat_spec, rng);
    for (std::size_t tile = 0; tile < cat.tiles; ++tile) {
      double sum = 0.0;
      bool binary = true;
      for (std::size_t b = 0; b < cat.blocks; ++b) {
        const double v = step.s_hat[tile * cat.blocks + b];
        if (v != 0.0 && v != 1.0) binary = false;
        sum += v;
      }
      if (!binary || sum != 1.0) ++invalid;
      ++tile_samples;
    }
    Transition tr = grid->step(state, static_cast<std::size_t>(rng() % 5));
    state = tr.done ? grid->reset(rng) : tr.next_state;
  }
  ss << "one-hot invalid tiles " << invalid << "/" << tile_samples;

  Outcome out;
  out.passed = decreasing && invalid == 0;
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 12: per-prune-event lipschitz decrease in a 50% magnitude run
Outcome criterion_prune_event_decrease() {
  auto env = make_point_mass();
  PpoConfig cfg = point_mass_train_config(3, 65536);
  PruneConfig pcfg;
  pcfg.criterion = PruneCriterion::kMagnitude;
  pcfg.target_sparsity = 0.5;
  pcfg.schedule = PruneSchedule::kLinear;
  pcfg.update_interval = 16;
  const TrainResult run = train_ppo(*env, cfg, pcfg);
  std::size_t violations = 0;
  for (const PruneEventRecord& ev : run.prune_events) {
    if (ev.lipschitz_after > ev.lipschitz_before) ++violations;
  }
  Outcome out;
  out.passed = !run.prune_events.empty() && violations == 0;
  std::ostringstream ss;
  ss << "violations=" << violations << " over " << run.prune_events.size()
     << " prune events, final sparsity "
     << format_double(run.metrics.back().sparsity);
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 13: harness arithmetic
Outcome criterion_harness_arithmetic() {
  bool ok = true;
  std::ostringstream ss;
  const std::vector<double> xs{1.0, 2.0, 3.0};
  const Aggregate a = aggregate(xs);
  if (!(std::fabs(a.mean - 2.0) < 1e-12 && a.ci95 &&
        std::fabs(*a.ci95 - 1.1316) < 1e-4)) {
    ok = false;
    ss << "aggregate((1,2,3)) mean " << format_double(a.mean) << " ci95 "
       << format_double(a.ci95.value_or(-1)) << "; ";
  }
  const std::vector<SweetPoint> curve{
      {0.3, 1.0, 1.26}, {0.5, 0.9, 1.1}, {0.9, 0.5, 0.8}};
  if (sweet_spot(curve) != 0.3) {
    ok = false;
    ss << "sweet_spot != 0.3; ";
  }
  std::mt19937_64 rng(1313);
  std::size_t scale_violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double k = std::exp(uniform_range(rng, -4.0, 4.0));
    const double value = uniform_range(rng, -50.0, 50.0);
    const double baseline = uniform_range(rng, 0.5, 50.0);
    const double direct = normalize(value, baseline);
    const double scaled = normalize(k * value, k * baseline);
    if (std::fabs(direct - scaled) > 1e-9 * std::max(1.0, std::fabs(direct))) {
      ++scale_violations;
    }
    std::vector<SweetPoint> scaled_curve = curve;
    for (SweetPoint& p : scaled_curve) {
      p.norm_clean *= k;
      p.norm_robust *= k;
    }
    if (sweet_spot(scaled_curve) != sweet_spot(curve)) ++scale_violations;
  }
  if (scale_violations > 0) {
    ok = false;
    ss << "scale violations=" << scale_violations << "; ";
  }
  ss << "aggregate/sweet-spot/normalization checks done";
  Outcome out;
  out.passed = ok;
  out.detail = ss.str();
  return out;
}

// ---------------------------------------------------------------------------
// criterion 14: byte-identical outputs under repeated seeds
Outcome criterion_determinism() {
  const auto doc = nlohmann::json::parse(R"({
    "env": {"name": "point_mass", "horizon": 16},
    "ppo": {"total_steps": 256, "num_envs": 2, "rollout_len": 8,
            "update_epochs": 1, "minibatches": 2, "hidden_sizes": [6], "seed": 5},
    "prune": {"criterion": "magnitude", "target_sparsity": 0.5, "update_interval": 4},
    "attack": {"epsilon": 0.075, "pgd_steps": 3},
    "cert": {"num_states": 3, "quadrature_points": 3, "r_max": 10.0},
    "sweep": {"criteria": ["magnitude"], "sparsities": [0, 0.5], "kappas": [0],
              "seeds": [0, 1], "eval_episodes": 2, "attacks": ["random"]}
  })");
  const RunConfig cfg = parse_run_config(doc);
  const fs::path base = fs::temp_directory_path() / "prunecert_acceptance_det";
  fs::remove_all(base);
  bool ok = true;
  std::ostringstream ss;

  const std::string s1 = (base / "sweep1").string();
  const std::string s2 = (base / "sweep2").string();
  run_sweep(cfg, s1, 2);
  run_sweep(cfg, s2, 1);
  write_report(load_results_csv(s1 + "/results.csv"), cfg, s1);
  write_report(load_results_csv(s2 + "/results.csv"), cfg, s2);
  for (const char* file : {"/results.csv", "/cert.csv", "/frontier.csv",
                           "/sweetspots.csv", "/worstseed.csv"}) {
    if (read_text_file(s1 + file) != read_text_file(s2 + file)) {
      ok = false;
      ss << file << " differs; ";
    }
  }

  const std::string t1 = (base / "train1").string();
  const std::string t2 = (base / "train2").string();
  run_train(cfg, t1);
  run_train(cfg, t2);
  if (read_text_file(t1 + "/metrics.csv") != read_text_file(t2 + "/metrics.csv") ||
      read_text_file(t1 + "/weights.json") != read_text_file(t2 + "/weights.json")) {
    ok = false;
    ss << "train outputs differ; ";
  }

#ifdef PRUNECERT_CLI_PATH
  {
    const fs::path cfg_path = base / "config.json";
    write_text_file(cfg_path.string(), doc.dump(1));
    const std::string c1 = (base / "cli1").string();
    const std::string c2 = (base / "cli2").string();
    const std::string cli = PRUNECERT_CLI_PATH;
    const std::string cmd1 = cli + " train --config " + cfg_path.string() + " --out " +
                             c1 + " > /dev/null 2>&1";
    const std::string cmd2 = cli + " train --config " + cfg_path.string() + " --out " +
                             c2 + " > /dev/null 2>&1";
    if (std::system(cmd1.c_str()) != 0 || std::system(cmd2.c_str()) != 0) {
      ok = false;
      ss << "cli train failed; ";
    } else if (read_text_file(c1 + "/metrics.csv") !=
               read_text_file(c2 + "/metrics.csv")) {
      ok = false;
      ss << "cli metrics differ; ";
    }
  }
#endif
  fs::remove_all(base);
  ss << "sweep/report/train/cli reruns byte-identical";
  Outcome out;
  out.passed = ok;
  out.detail = ss.str();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--criterion") only = std::atoi(argv[i + 1]);
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"surrogate-bound pruning monotonicity, exact, 10^4 pairs", criterion_monotonicity},
      {"Gaussian bound soundness", criterion_gaussian_soundness},
      {"categorical constant audit", criterion_categorical_audit},
      {"local Jacobian norm <= surrogate Lipschitz", criterion_local_vs_global},
      {"reverse-mode gradients vs finite differences", criterion_gradient_correctness},
      {"Pinsker consistency", criterion_pinsker},
      {"schedules and ERK allocation", criterion_schedules_erk},
      {"PPO learns point-mass on every seed", criterion_ppo_learns},
      {"attack ordering clean > random > mad", criterion_attack_ordering},
      {"SA inner solver within 5% of the corner optimum", criterion_sa_inner_solver},
      {"learned-adversary stealth trade-off", criterion_stealth_tradeoff},
      {"per-prune-event Lipschitz decrease", criterion_prune_event_decrease},
      {"harness arithmetic", criterion_harness_arithmetic},
      {"byte-identical reruns", criterion_determinism},
  };

  bool all_passed = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (only != 0 && only != number) continue;
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome.passed = false;
      outcome.detail = std::string("exception: ") + e.what();
    }
    std::cout << (outcome.passed ? "[PASS] " : "[FAIL] ") << "criterion " << number
              << ": " << criteria[i].first << " - " << outcome.detail << std::endl;
    all_passed = all_passed && outcome.passed;
  }
  return all_passed ? 0 : 1;
}
