#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunecert/envs.hpp"
#include "prunecert/policy.hpp"
#include "prunecert/prune.hpp"
#include "prunecert/tape.hpp"

namespace prunecert {

struct PpoConfig {
  std::size_t total_steps = 200000;
  double learning_rate = 3e-4;
  std::size_t num_envs = 16;
  std::size_t rollout_len = 128;
  std::size_t update_epochs = 4;
  std::size_t minibatches = 32;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 1.0;
  double kappa = 0.0;                // SA regularization weight
  std::size_t sa_inner_steps = 5;
  double sa_step_size = 0.0;         // <= 0 resolves to epsilon/2
  double epsilon = 0.075;            // B(s) budget, l-inf
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden_sizes{64, 64};
  Activation activation = Activation::kTanh;
  double sigma = 0.1;
  std::size_t checkpoint_interval = 0;  // updates; 0 = final only
  bool lr_anneal = false;               // linear decay to zero over the run

  std::size_t batch_size() const { return num_envs * rollout_len; }
  std::size_t num_updates() const { return total_steps / batch_size(); }
  double resolved_sa_step() const {
    return sa_step_size > 0.0 ? sa_step_size : epsilon / 2.0;
  }
};

/// Perturbs an observation before the policy sees it. The environment always
/// transitions on the true state.
using StateAdversary =
    std::function<std::vector<double>(std::span<const double> obs, std::mt19937_64& rng)>;

struct RolloutBatch {
  std::size_t count = 0;    // num_envs * rollout_len, index t*num_envs+e
  std::size_t obs_dim = 0;
  Matrix states;            // true observations
  Matrix obs_fed;           // observations the policy acted on
  std::vector<std::vector<double>> cont_actions;
  std::vector<std::size_t> disc_actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::uint8_t> dones;
  std::vector<double> bootstrap_values;  // one per env
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Standard recursive GAE over one sequence. delta_t = r_t + gamma (1-d_t)
/// v_{t+1} - v_t; A_t = delta_t + gamma lambda (1-d_t) A_{t+1}. returns =
/// advantages + values.
void gae(std::span<const double> rewards, std::span<const double> values,
         std::span<const std::uint8_t> dones, double bootstrap_value, double gamma,
         double lambda, std::span<double> advantages_out, std::span<double> returns_out);

class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);
  void attach(std::vector<std::span<double>> params);
  void step(std::span<const std::vector<double>> grads);
  std::size_t param_count() const;
  void set_lr(double lr);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::span<double>> params_;
  std::vector<std::vector<double>> m_, v_;
};

/// Global-norm gradient clip; returns the post-clip norm.
double clip_global_norm(std::span<std::vector<double>> grads, double max_norm);

struct PpoLossNodes {
  Tape::Id total = 0;
  Tape::Id loss_pi = 0;
  Tape::Id loss_v = 0;
};

/// Clipped-surrogate actor loss + value MSE - entropy bonus, assembled on the
/// caller's tape from the new log-probs/value/entropy nodes.
PpoLossNodes build_ppo_loss(Tape& tape, Tape::Id logp_new, Tape::Id value,
                            Tape::Id entropy_mean,
                            std::span<const double> old_logp,
                            std::span<const double> norm_advantages,
                            std::span<const double> returns, const PpoConfig& cfg);

/// Mean 0 / std 1 with a 1e-8 std floor (population std).
std::vector<double> normalize_advantages(std::span<const double> adv);

/// Inner maximization of KL(pi(.|s) || pi(.|s_hat)) over the l-inf ball by
/// sign-gradient PGD from s_hat = s (sign(0) = +1 so the first step leaves the
/// zero-gradient start). Returns the final iterates, one row per state.
Matrix sa_adversarial_states(const PolicyNetwork& net, const Matrix& states,
                             double epsilon, std::size_t inner_steps,
                             double step_size);

/// R_SA value at the PGD solution (no parameter gradients).
double sa_regularizer_value(const PolicyNetwork& net, const Matrix& states,
                            double epsilon, std::size_t inner_steps,
                            double step_size);

struct UpdateMetrics {
  std::size_t step = 0;  // env steps consumed so far
  double return_mean = 0.0;
  double return_std = 0.0;
  double loss_pi = 0.0;
  double loss_v = 0.0;
  double entropy = 0.0;
  double r_sa = 0.0;
  double sparsity = 0.0;
  double lipschitz = 0.0;
  double grad_norm = 0.0;  // max post-clip global norm over minibatches
};

struct PruneEventRecord {
  std::size_t optimizer_step = 0;
  double lipschitz_before = 0.0;    // effective weights just before the event
  double lipschitz_after = 0.0;     // effective weights just after
  double lipschitz_unmasked = 0.0;  // same weights with no mask
  double sparsity_scheduled = 0.0;
  double sparsity_realized = 0.0;
  std::size_t prunable_params = 0;
};

struct TrainResult {
  PolicyNetwork net;
  std::vector<UpdateMetrics> metrics;
  std::vector<PruneEventRecord> prune_events;
};

std::vector<std::string> metrics_csv_header();
std::vector<std::string> metrics_csv_row(const UpdateMetrics& m);

/// Algorithm: per update, collect rollouts (policy acting on possibly
/// perturbed observations), GAE, then epochs x minibatches of clipped-PPO
/// steps with optional SA regularization; after each optimizer step past
/// burn-in, the pruning schedule may update and re-apply masks.
TrainResult train_ppo(const Environment& env, const PpoConfig& cfg,
                      const PruneConfig& prune_cfg,
                      const StateAdversary* adversary = nullptr,
                      const std::string& metrics_csv_path = "",
                      const std::string& checkpoint_prefix = "");

/// Same loop, starting from a caller-provided network.
TrainResult train_ppo_from(PolicyNetwork net, const Environment& env,
                           const PpoConfig& cfg, const PruneConfig& prune_cfg,
                           const StateAdversary* adversary = nullptr,
                           const std::string& metrics_csv_path = "",
                           const std::string& checkpoint_prefix = "");

}  // namespace prunecert
