#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prunecert/adversary_net.hpp"
#include "prunecert/cert.hpp"
#include "prunecert/envs.hpp"
#include "prunecert/policy.hpp"
#include "prunecert/rl.hpp"

namespace prunecert {

enum class AttackFamily { kNone, kRandom, kValue, kMad, kRs, kLearned };

std::string attack_name(AttackFamily f);
AttackFamily attack_from_name(const std::string& name);

struct RsParams {
  std::size_t q_hidden = 64;
  std::size_t td_epochs = 3;
  double robust_perturb_scale = 1.0;
  std::size_t buffer_transitions = 8192;
  double lr = 1e-3;
  std::size_t minibatch = 64;
};

struct AttackSpec {
  AttackFamily family = AttackFamily::kNone;
  double epsilon = 0.075;
  NormP norm_p = NormP::kLinf;
  std::size_t pgd_steps = 10;
  double pgd_step_size = 0.0;  // <= 0 resolves to epsilon/4
  double jitter_scale = 1e-3;  // MAD start jitter relative to epsilon
  RsParams rs;
  double attack_rate = 1.0;      // learned adversary Bernoulli rate r
  double lambda_stealth = 10.0;  // learned adversary stealth weight
  std::shared_ptr<const AdversaryNet> adversary;

  double resolved_pgd_step() const {
    return pgd_step_size > 0.0 ? pgd_step_size : epsilon / 4.0;
  }
};

/// s + u with u uniform on the l-inf box (or uniform in the l2 ball for p=2).
std::vector<double> random_attack(std::span<const double> s, const AttackSpec& spec,
                                  std::mt19937_64& rng);

/// PGD ascent on KL(pi(.|s) || pi(.|s_hat)) from a jittered start, best
/// iterate by objective.
std::vector<double> mad_attack(const PolicyNetwork& net, std::span<const double> s,
                               const AttackSpec& spec, std::mt19937_64& rng);

/// PGD descent on the critic value V(s_hat); the untouched start is a
/// candidate so the result never has higher value than V(s).
std::vector<double> value_attack(const PolicyNetwork& net, std::span<const double> s,
                                 const AttackSpec& spec);

/// Action-value model for the Robust Sarsa attack: continuous policies use
/// Q(concat(s, a)) -> scalar, categorical use Q(s) -> K values.
struct QModel {
  std::vector<DenseLayer> layers;
  bool discrete = false;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;

  double q_continuous(std::span<const double> obs, std::span<const double> action) const;
  std::vector<double> q_discrete(std::span<const double> obs) const;
};

/// Phase 1: Sarsa-style TD regression on victim trajectories, with targets
/// evaluated at successors perturbed within robust_perturb_scale * epsilon.
QModel fit_robust_q(const PolicyNetwork& victim, const Environment& env,
                    const AttackSpec& spec, double gamma, std::mt19937_64& rng);

/// Phase 2: PGD on s_hat to minimize Q(s, mean-action-of pi(.|s_hat)); for
/// categorical policies the expected Q under pi(.|s_hat).
std::vector<double> rs_attack(const PolicyNetwork& victim, const QModel& q,
                              std::span<const double> s, const AttackSpec& spec);

struct LearnedStepResult {
  std::vector<double> s_hat;
  double logp_delta = 0.0;
  double logp_mask = 0.0;
  double stealth = 0.0;  // m * ||applied delta||_2, or Hamming tile distance
  bool mask_on = false;
  std::vector<double> delta_preclamp;      // continuous action for PPO
  std::vector<std::size_t> tile_choice;    // categorical action for PPO
};

/// One adversary step: sample delta ~ N(mu(s), diag(sigma(s)^2)) (clamped to
/// the budget box, log-prob pre-clamp) or per-tile block flips; apply when the
/// Bernoulli(r) mask fires.
LearnedStepResult learned_adversary_step(const AdversaryNet& adv,
                                         std::span<const double> s,
                                         const AttackSpec& spec,
                                         std::mt19937_64& rng);

struct AdversaryTrainResult {
  AdversaryNet net;
  std::vector<UpdateMetrics> metrics;
  double final_mean_delta = 0.0;  // mean applied ||delta||_2 late in training
};

/// PPO over the adversary's decision process: it observes the victim's
/// observation, emits a perturbation, the frozen victim acts on the perturbed
/// observation, the environment steps on the true state, and the adversary is
/// rewarded -r_victim - lambda_stealth * stealth.
AdversaryTrainResult train_adversary(const PolicyNetwork& victim,
                                     const Environment& env, const AttackSpec& spec,
                                     const PpoConfig& cfg);

/// Stateful attack applier (RS fits its Q model up front).
class StateAttack {
 public:
  virtual ~StateAttack() = default;
  virtual std::vector<double> perturb(std::span<const double> obs,
                                      std::mt19937_64& rng) = 0;
};

std::unique_ptr<StateAttack> make_attack(const AttackSpec& spec,
                                         const PolicyNetwork& victim,
                                         const Environment& env, double gamma,
                                         std::mt19937_64& setup_rng);

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::optional<double> sem;   // absent with a single episode
  std::optional<double> ci95;  // 1.96 * sem
  std::vector<double> per_episode;
  double f_hat = 0.0;           // mean TV(pi(.|s), pi(.|s_hat)) over steps
  double mean_delta_l2 = 0.0;   // mean applied ||s_hat - s||_2 over steps
};

EvalResult evaluate(const PolicyNetwork& victim, const Environment& env,
                    StateAttack* attack, std::size_t episodes, std::mt19937_64& rng);

std::vector<std::string> eval_csv_header();

}  // namespace prunecert
