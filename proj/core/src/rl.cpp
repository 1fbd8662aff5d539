#include "prunecert/rl.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "prunecert/cert.hpp"
#include "prunecert/csv.hpp"
#include "prunecert/rng.hpp"
#include "prunecert/weights_io.hpp"

namespace prunecert {

void gae(std::span<const double> rewards, std::span<const double> values,
         std::span<const std::uint8_t> dones, double bootstrap_value, double gamma,
         double lambda, std::span<double> advantages_out, std::span<double> returns_out) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n || advantages_out.size() != n ||
      returns_out.size() != n) {
    throw std::invalid_argument("gae: length mismatch");
  }
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double nonterminal = dones[i] ? 0.0 : 1.0;
    const double next_value = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    const double delta = rewards[i] + gamma * next_value * nonterminal - values[i];
    running = delta + gamma * lambda * nonterminal * running;
    advantages_out[i] = running;
    returns_out[i] = running + values[i];
  }
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::attach(std::vector<std::span<double>> params) {
  params_ = std::move(params);
  m_.clear();
  v_.clear();
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
  t_ = 0;
}

void AdamOptimizer::step(std::span<const std::vector<double>> grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("adam: gradient pack mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    const auto& g = grads[k];
    if (g.size() != p.size()) throw std::invalid_argument("adam: gradient size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::size_t AdamOptimizer::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void AdamOptimizer::set_lr(double lr) { lr_ = lr; }

double clip_global_norm(std::span<std::vector<double>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g) v *= scale;
    }
    return max_norm;
  }
  return norm;
}

std::vector<double> normalize_advantages(std::span<const double> adv) {
  const double n = static_cast<double>(adv.size());
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double stddev = std::max(std::sqrt(var / n), 1e-8);
  std::vector<double> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) out[i] = (adv[i] - mean) / stddev;
  return out;
}

PpoLossNodes build_ppo_loss(Tape& tape, Tape::Id logp_new, Tape::Id value,
                            Tape::Id entropy_mean,
                            std::span<const double> old_logp,
                            std::span<const double> norm_advantages,
                            std::span<const double> returns, const PpoConfig& cfg) {
  Tape::Id old_node = tape.constant(Matrix::column(old_logp));
  Tape::Id adv_node = tape.constant(Matrix::column(norm_advantages));
  Tape::Id ret_node = tape.constant(Matrix::column(returns));

  Tape::Id ratio = tape.exp_(tape.sub(logp_new, old_node));
  Tape::Id surr1 = tape.mul(ratio, adv_node);
  Tape::Id surr2 = tape.mul(
      tape.clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon), adv_node);
  PpoLossNodes nodes;
  nodes.loss_pi = tape.scale(tape.mean_all(tape.min_(surr1, surr2)), -1.0);
  nodes.loss_v = tape.mean_all(tape.square(tape.sub(value, ret_node)));
  Tape::Id total = tape.add(nodes.loss_pi, tape.scale(nodes.loss_v, cfg.value_coef));
  total = tape.add(total, tape.scale(entropy_mean, -cfg.entropy_coef));
  nodes.total = total;
  return nodes;
}

namespace {

double sign_step(double g) { return g >= 0.0 ? 1.0 : -1.0; }  // sign(0) = +1

struct HeadConstants {
  std::vector<double> inv_two_sigma_sq;  // gaussian
  double logp_const = 0.0;               // gaussian additive constant
  double entropy_const = 0.0;            // gaussian entropy (fixed sigma)
};

HeadConstants gaussian_constants(const PolicyNetwork& net) {
  HeadConstants h;
  constexpr double kLog2Pi = 1.8378770664093453;
  for (double s : net.sigma) {
    h.inv_two_sigma_sq.push_back(1.0 / (2.0 * s * s));
    h.logp_const += -std::log(s) - 0.5 * kLog2Pi;
    h.entropy_const += 0.5 * (1.0 + kLog2Pi) + std::log(s);
  }
  return h;
}

}  // namespace

Matrix sa_adversarial_states(const PolicyNetwork& net, const Matrix& states,
                             double epsilon, std::size_t inner_steps,
                             double step_size) {
  if (epsilon < 0.0) throw std::invalid_argument("sa: epsilon must be >= 0");
  if (epsilon == 0.0 || inner_steps == 0) return states;
  const std::size_t n = states.rows;
  const std::size_t k = net.output_dim();

  // Distribution at the clean states: constant w.r.t. s_hat.
  Matrix g_clean(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(states.data.begin() + i * states.cols,
                            states.data.begin() + (i + 1) * states.cols);
    const std::vector<double> out = trunk_forward(net.actor, row);
    for (std::size_t j = 0; j < k; ++j) g_clean(i, j) = out[j];
  }
  Matrix p_clean;
  if (net.head == HeadFamily::kCategorical) {
    p_clean = Matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> row(g_clean.data.begin() + i * k,
                              g_clean.data.begin() + (i + 1) * k);
      const std::vector<double> p = softmax(row);
      for (std::size_t j = 0; j < k; ++j) p_clean(i, j) = p[j];
    }
  }
  const HeadConstants hc =
      net.head == HeadFamily::kGaussian ? gaussian_constants(net) : HeadConstants{};

  Matrix s_hat = states;
  for (std::size_t it = 0; it < inner_steps; ++it) {
    Tape tape;
    Tape::Id sh = tape.leaf(s_hat);
    Tape::Id out = trunk_forward_tape(tape, net.actor, sh);
    Tape::Id objective;
    if (net.head == HeadFamily::kGaussian) {
      Tape::Id diff = tape.sub(tape.constant(g_clean), out);
      Tape::Id kl_row =
          tape.row_sum(tape.mul_row_const(tape.square(diff), hc.inv_two_sigma_sq));
      objective = tape.sum_all(kl_row);
    } else {
      // KL terms that depend on s_hat: -sum_k p_clean * z_hat + lse(z_hat)
      Tape::Id cross = tape.row_sum(tape.mul(tape.constant(p_clean), out));
      Tape::Id lse = tape.logsumexp_blocks(out, k);
      objective = tape.sum_all(tape.sub(lse, cross));
    }
    tape.backward(objective);
    const Matrix& grad = tape.grad(sh);
    for (std::size_t i = 0; i < s_hat.data.size(); ++i) {
      double v = s_hat.data[i] + step_size * sign_step(grad.data[i]);
      const double lo = states.data[i] - epsilon;
      const double hi = states.data[i] + epsilon;
      s_hat.data[i] = std::clamp(v, lo, hi);
    }
  }
  return s_hat;
}

double sa_regularizer_value(const PolicyNetwork& net, const Matrix& states,
                            double epsilon, std::size_t inner_steps,
                            double step_size) {
  if (epsilon == 0.0) return 0.0;
  const Matrix s_hat = sa_adversarial_states(net, states, epsilon, inner_steps, step_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < states.rows; ++i) {
    std::vector<double> s(states.data.begin() + i * states.cols,
                          states.data.begin() + (i + 1) * states.cols);
    std::vector<double> sh(s_hat.data.begin() + i * s_hat.cols,
                           s_hat.data.begin() + (i + 1) * s_hat.cols);
    acc += kl(forward(net, s).dist, forward(net, sh).dist);
  }
  return acc / static_cast<double>(states.rows);
}

std::vector<std::string> metrics_csv_header() {
  return {"step", "return_mean", "return_std", "loss_pi", "loss_v",
          "entropy", "r_sa", "sparsity", "lipschitz", "grad_norm"};
}

std::vector<std::string> metrics_csv_row(const UpdateMetrics& m) {
  return {std::to_string(m.step), format_double(m.return_mean),
          format_double(m.return_std), format_double(m.loss_pi),
          format_double(m.loss_v), format_double(m.entropy),
          format_double(m.r_sa), format_double(m.sparsity),
          format_double(m.lipschitz), format_double(m.grad_norm)};
}

namespace {

class EpisodeTracker {
 public:
  explicit EpisodeTracker(std::size_t num_envs) : running_(num_envs, 0.0) {}

  void add(std::size_t env, double reward, bool done) {
    running_[env] += reward;
    if (done) {
      completed_.push_back(running_[env]);
      if (completed_.size() > 64) completed_.pop_front();
      running_[env] = 0.0;
    }
  }

  std::pair<double, double> stats() const {
    if (completed_.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double r : completed_) mean += r;
    mean /= static_cast<double>(completed_.size());
    double var = 0.0;
    for (double r : completed_) var += (r - mean) * (r - mean);
    const double stddev =
        completed_.size() > 1
            ? std::sqrt(var / static_cast<double>(completed_.size() - 1))
            : 0.0;
    return {mean, stddev};
  }

 private:
  std::deque<double> completed_;
  std::vector<double> running_;
};

RolloutBatch collect_rollout(const Environment& env, const PolicyNetwork& net,
                             const PpoConfig& cfg, const StateAdversary* adversary,
                             std::vector<std::vector<double>>& env_states,
                             std::vector<std::mt19937_64>& env_rngs,
                             std::mt19937_64& action_rng, EpisodeTracker& tracker) {
  const std::size_t n = cfg.batch_size();
  const std::size_t obs_dim = env.spec().obs_dim;
  const bool discrete = env.spec().discrete_actions;

  RolloutBatch batch;
  batch.count = n;
  batch.obs_dim = obs_dim;
  batch.states = Matrix(n, obs_dim);
  batch.obs_fed = Matrix(n, obs_dim);
  batch.log_probs.resize(n);
  batch.rewards.resize(n);
  batch.values.resize(n);
  batch.dones.resize(n);
  if (discrete) batch.disc_actions.resize(n);
  else batch.cont_actions.resize(n);

  for (std::size_t t = 0; t < cfg.rollout_len; ++t) {
    for (std::size_t e = 0; e < cfg.num_envs; ++e) {
      const std::size_t i = t * cfg.num_envs + e;
      const std::vector<double> obs = env.observe(env_states[e]);
      std::vector<double> fed =
          adversary ? (*adversary)(obs, env_rngs[e]) : obs;
      for (std::size_t j = 0; j < obs_dim; ++j) {
        batch.states(i, j) = obs[j];
        batch.obs_fed(i, j) = fed[j];
      }
      const ForwardResult fwd = forward(net, fed);
      batch.values[i] = fwd.value;
      Action action;
      if (discrete) {
        const std::size_t a = sample_categorical(fwd.dist, action_rng);
        batch.disc_actions[i] = a;
        batch.log_probs[i] = log_prob(fwd.dist, a);
        action = a;
      } else {
        std::vector<double> a = sample_gaussian(fwd.dist, action_rng);
        batch.log_probs[i] = log_prob(fwd.dist, std::span<const double>(a));
        batch.cont_actions[i] = a;
        action = std::move(a);
      }
      Transition tr = env.step(env_states[e], action);
      batch.rewards[i] = tr.reward;
      batch.dones[i] = tr.done ? 1 : 0;
      if (tr.truncated) {
        // horizon cut, not a terminal state: bootstrap the value through it
        batch.rewards[i] +=
            cfg.gamma * value_forward(net, env.observe(tr.next_state));
      }
      tracker.add(e, tr.reward, tr.done);
      env_states[e] = tr.done ? env.reset(env_rngs[e]) : tr.next_state;
    }
  }
  batch.bootstrap_values.resize(cfg.num_envs);
  for (std::size_t e = 0; e < cfg.num_envs; ++e) {
    batch.bootstrap_values[e] = value_forward(net, env.observe(env_states[e]));
  }

  // GAE per environment stream
  batch.advantages.resize(n);
  batch.returns.resize(n);
  std::vector<double> r(cfg.rollout_len), v(cfg.rollout_len), a(cfg.rollout_len),
      g(cfg.rollout_len);
  std::vector<std::uint8_t> d(cfg.rollout_len);
  for (std::size_t e = 0; e < cfg.num_envs; ++e) {
    for (std::size_t t = 0; t < cfg.rollout_len; ++t) {
      const std::size_t i = t * cfg.num_envs + e;
      r[t] = batch.rewards[i];
      v[t] = batch.values[i];
      d[t] = batch.dones[i];
    }
    gae(r, v, d, batch.bootstrap_values[e], cfg.gamma, cfg.gae_lambda, a, g);
    for (std::size_t t = 0; t < cfg.rollout_len; ++t) {
      const std::size_t i = t * cfg.num_envs + e;
      batch.advantages[i] = a[t];
      batch.returns[i] = g[t];
    }
  }
  return batch;
}

struct MinibatchNodes {
  Tape::Id logp = 0;
  Tape::Id value = 0;
  Tape::Id entropy_mean = 0;
};

MinibatchNodes evaluate_policy_nodes(Tape& tape, const PolicyNetwork& net,
                                     const TrunkLeaves& actor_leaves,
                                     const TrunkLeaves& critic_leaves,
                                     const Matrix& obs, const RolloutBatch& batch,
                                     std::span<const std::size_t> idx,
                                     const HeadConstants& hc) {
  MinibatchNodes out;
  Tape::Id obs_node = tape.constant(obs);
  Tape::Id g = trunk_forward_with_leaves(tape, net.actor, obs_node, actor_leaves);
  out.value = trunk_forward_with_leaves(tape, net.critic, obs_node, critic_leaves);

  if (net.head == HeadFamily::kGaussian) {
    const std::size_t adim = net.output_dim();
    Matrix actions(idx.size(), adim);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < adim; ++j) {
        actions(r, j) = batch.cont_actions[idx[r]][j];
      }
    }
    Tape::Id diff = tape.sub(tape.constant(actions), g);
    Tape::Id quad =
        tape.row_sum(tape.mul_row_const(tape.square(diff), hc.inv_two_sigma_sq));
    out.logp = tape.add_scalar(tape.scale(quad, -1.0), hc.logp_const);
    out.entropy_mean = tape.constant(Matrix(1, 1, {hc.entropy_const}));
  } else {
    const std::size_t k = net.output_dim();
    std::vector<std::size_t> chosen(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) chosen[r] = batch.disc_actions[idx[r]];
    Tape::Id sel = tape.select_per_block(g, k, chosen);
    Tape::Id lse = tape.logsumexp_blocks(g, k);
    out.logp = tape.sub(sel, lse);
    Tape::Id p = tape.softmax_blocks(g, k);
    Tape::Id ent_row = tape.sub(lse, tape.row_sum(tape.mul(p, g)));
    out.entropy_mean = tape.mean_all(ent_row);
  }
  return out;
}

}  // namespace

TrainResult train_ppo(const Environment& env, const PpoConfig& cfg,
                      const PruneConfig& prune_cfg, const StateAdversary* adversary,
                      const std::string& metrics_csv_path,
                      const std::string& checkpoint_prefix) {
  std::mt19937_64 init_rng(derive_seed(cfg.seed, 0));
  PolicyNetwork net = make_mlp_policy(
      env.spec().obs_dim,
      env.spec().discrete_actions ? env.spec().action_dim : env.spec().action_dim,
      cfg.hidden_sizes, cfg.activation,
      env.spec().discrete_actions ? HeadFamily::kCategorical : HeadFamily::kGaussian,
      cfg.sigma, init_rng);
  return train_ppo_from(std::move(net), env, cfg, prune_cfg, adversary,
                        metrics_csv_path, checkpoint_prefix);
}

TrainResult train_ppo_from(PolicyNetwork net, const Environment& env,
                           const PpoConfig& cfg, const PruneConfig& prune_cfg,
                           const StateAdversary* adversary,
                           const std::string& metrics_csv_path,
                           const std::string& checkpoint_prefix) {
  if (cfg.batch_size() == 0 || cfg.minibatches == 0 ||
      cfg.batch_size() % cfg.minibatches != 0) {
    throw std::invalid_argument("ppo: batch size must divide into minibatches");
  }
  TrainResult result;
  const std::size_t n_updates = cfg.num_updates();

  std::mt19937_64 action_rng(derive_seed(cfg.seed, 1));
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 2));
  std::vector<std::mt19937_64> env_rngs;
  for (std::size_t e = 0; e < cfg.num_envs; ++e) {
    env_rngs.emplace_back(derive_seed(cfg.seed, 1000 + e));
  }
  std::vector<std::vector<double>> env_states;
  for (std::size_t e = 0; e < cfg.num_envs; ++e) {
    env_states.push_back(env.reset(env_rngs[e]));
  }

  // Parameter layout: all weight matrices (actor then critic) against dense
  // storage, then all biases in place. The live net always holds the masked
  // (effective) weights.
  const bool pruning = prune_cfg.criterion != PruneCriterion::kNone &&
                       prune_cfg.target_sparsity > 0.0;
  const bool ste = gradients_flow_through_mask(prune_cfg.criterion);
  std::vector<Matrix*> net_ws;
  std::vector<std::vector<double>*> net_bs;
  for (DenseLayer& l : net.actor) {
    net_ws.push_back(&l.w);
    net_bs.push_back(&l.b);
  }
  for (DenseLayer& l : net.critic) {
    net_ws.push_back(&l.w);
    net_bs.push_back(&l.b);
  }
  std::vector<Matrix> dense(net_ws.size());
  for (std::size_t i = 0; i < net_ws.size(); ++i) dense[i] = *net_ws[i];

  // Prunable subset: actor weights, plus critic weights when configured.
  std::vector<std::size_t> prunable_idx;
  for (std::size_t i = 0; i < net.actor.size(); ++i) prunable_idx.push_back(i);
  if (prune_cfg.prune_critic) {
    for (std::size_t i = 0; i < net.critic.size(); ++i) {
      prunable_idx.push_back(net.actor.size() + i);
    }
  }
  std::vector<const Matrix*> prunable_views;
  for (std::size_t i : prunable_idx) {
    prunable_views.push_back(ste ? &dense[i] : net_ws[i]);
  }
  PruneState pstate = PruneState::init(prune_cfg, prunable_views);

  auto sync_effective = [&]() {
    for (std::size_t i = 0; i < net_ws.size(); ++i) *net_ws[i] = dense[i];
    if (pruning) {
      for (std::size_t k = 0; k < prunable_idx.size(); ++k) {
        Matrix& w = *net_ws[prunable_idx[k]];
        const Matrix& m = pstate.masks[k];
        for (std::size_t i = 0; i < w.data.size(); ++i) {
          if (m.data[i] == 0.0) w.data[i] = 0.0;
        }
      }
    }
  };

  AdamOptimizer adam(cfg.learning_rate);
  {
    std::vector<std::span<double>> params;
    for (Matrix& w : dense) params.emplace_back(w.data);
    for (std::vector<double>* b : net_bs) params.emplace_back(*b);
    adam.attach(std::move(params));
  }

  const HeadConstants hc =
      net.head == HeadFamily::kGaussian ? gaussian_constants(net) : HeadConstants{};
  const std::size_t total_opt_steps =
      n_updates * cfg.update_epochs * cfg.minibatches;
  std::size_t opt_step = 0;
  EpisodeTracker tracker(cfg.num_envs);
  CsvWriter metrics_csv(metrics_csv_header());

  for (std::size_t update = 0; update < n_updates; ++update) {
    if (cfg.lr_anneal) {
      adam.set_lr(cfg.learning_rate *
                  (1.0 - static_cast<double>(update) / static_cast<double>(n_updates)));
    }
    RolloutBatch batch = collect_rollout(env, net, cfg, adversary, env_states,
                                         env_rngs, action_rng, tracker);

    UpdateMetrics um;
    um.step = (update + 1) * cfg.batch_size();
    double max_postclip_norm = 0.0;
    double acc_pi = 0.0, acc_v = 0.0, acc_ent = 0.0, acc_rsa = 0.0;
    std::size_t n_minibatch_steps = 0;

    std::vector<std::size_t> order(batch.count);
    for (std::size_t i = 0; i < batch.count; ++i) order[i] = i;
    const std::size_t mb_size = batch.count / cfg.minibatches;

    for (std::size_t epoch = 0; epoch < cfg.update_epochs; ++epoch) {
      // Fisher-Yates with the dedicated shuffle stream
      for (std::size_t i = batch.count - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(
            uniform01(shuffle_rng) * static_cast<double>(i + 1));
        std::swap(order[i], order[std::min(j, i)]);
      }
      for (std::size_t mb = 0; mb < cfg.minibatches; ++mb) {
        std::span<const std::size_t> idx(order.data() + mb * mb_size, mb_size);

        Matrix obs_mb(mb_size, batch.obs_dim);
        Matrix states_mb(mb_size, batch.obs_dim);
        std::vector<double> old_logp(mb_size), adv(mb_size), ret(mb_size);
        for (std::size_t r = 0; r < mb_size; ++r) {
          const std::size_t i = idx[r];
          for (std::size_t j = 0; j < batch.obs_dim; ++j) {
            obs_mb(r, j) = batch.obs_fed(i, j);
            states_mb(r, j) = batch.states(i, j);
          }
          old_logp[r] = batch.log_probs[i];
          adv[r] = batch.advantages[i];
          ret[r] = batch.returns[i];
        }
        const std::vector<double> norm_adv = normalize_advantages(adv);

        const bool use_sa = cfg.kappa > 0.0 && cfg.epsilon > 0.0;
        Matrix s_hat;
        if (use_sa) {
          s_hat = sa_adversarial_states(net, states_mb, cfg.epsilon,
                                        cfg.sa_inner_steps, cfg.resolved_sa_step());
        }

        Tape tape;
        const TrunkLeaves actor_leaves = register_trunk_leaves(tape, net.actor);
        const TrunkLeaves critic_leaves = register_trunk_leaves(tape, net.critic);
        const MinibatchNodes nodes = evaluate_policy_nodes(
            tape, net, actor_leaves, critic_leaves, obs_mb, batch, idx, hc);
        PpoLossNodes loss = build_ppo_loss(tape, nodes.logp, nodes.value,
                                           nodes.entropy_mean, old_logp, norm_adv,
                                           ret, cfg);
        Tape::Id total = loss.total;
        double rsa_value = 0.0;
        if (use_sa) {
          Tape::Id s_node = tape.constant(states_mb);
          Tape::Id sh_node = tape.constant(s_hat);
          Tape::Id gs = trunk_forward_with_leaves(tape, net.actor, s_node, actor_leaves);
          Tape::Id gsh = trunk_forward_with_leaves(tape, net.actor, sh_node, actor_leaves);
          Tape::Id kl_row;
          if (net.head == HeadFamily::kGaussian) {
            Tape::Id diff = tape.sub(gs, gsh);
            kl_row = tape.row_sum(
                tape.mul_row_const(tape.square(diff), hc.inv_two_sigma_sq));
          } else {
            const std::size_t k = net.output_dim();
            Tape::Id ps = tape.softmax_blocks(gs, k);
            Tape::Id cross = tape.row_sum(tape.mul(ps, tape.sub(gs, gsh)));
            kl_row = tape.add(tape.sub(cross, tape.logsumexp_blocks(gs, k)),
                              tape.logsumexp_blocks(gsh, k));
          }
          Tape::Id r_sa = tape.mean_all(kl_row);
          rsa_value = tape.scalar(r_sa);
          total = tape.add(total, tape.scale(r_sa, cfg.kappa));
        }

        if (!std::isfinite(tape.scalar(total))) {
          std::ostringstream msg;
          msg << "ppo: non-finite loss at optimizer step " << opt_step
              << " (loss_pi=" << tape.scalar(loss.loss_pi)
              << ", loss_v=" << tape.scalar(loss.loss_v) << ", r_sa=" << rsa_value
              << ")";
          throw std::runtime_error(msg.str());
        }
        tape.backward(total);

        // gradient pack aligned with the optimizer layout
        std::vector<std::vector<double>> grads;
        grads.reserve(net_ws.size() + net_bs.size());
        for (Tape::Id w : actor_leaves.ws) grads.push_back(tape.grad(w).data);
        for (Tape::Id w : critic_leaves.ws) grads.push_back(tape.grad(w).data);
        for (Tape::Id b : actor_leaves.bs) grads.push_back(tape.grad(b).data);
        for (Tape::Id b : critic_leaves.bs) grads.push_back(tape.grad(b).data);

        if (pruning && !ste) {
          for (std::size_t k = 0; k < prunable_idx.size(); ++k) {
            auto& g = grads[prunable_idx[k]];
            const Matrix& m = pstate.masks[k];
            for (std::size_t i = 0; i < g.size(); ++i) {
              if (m.data[i] == 0.0) g[i] = 0.0;
            }
          }
        }

        std::vector<Matrix> saliency_grads;
        if (pruning && prune_cfg.criterion == PruneCriterion::kSaliency) {
          for (std::size_t k = 0; k < prunable_idx.size(); ++k) {
            const std::size_t i = prunable_idx[k];
            Matrix g(net_ws[i]->rows, net_ws[i]->cols, grads[i]);
            saliency_grads.push_back(std::move(g));
          }
        }

        max_postclip_norm =
            std::max(max_postclip_norm, clip_global_norm(grads, cfg.max_grad_norm));
        adam.step(grads);
        sync_effective();
        ++opt_step;

        if (pruning && prune_event_due(prune_cfg, opt_step, total_opt_steps)) {
          PruneEventRecord ev;
          ev.optimizer_step = opt_step;
          ev.lipschitz_before = surrogate_lipschitz(net);
          {
            std::vector<DenseLayer> unmasked = net.actor;
            for (std::size_t i = 0; i < unmasked.size(); ++i) unmasked[i].w = dense[i];
            ev.lipschitz_unmasked = surrogate_lipschitz_layers(unmasked);
          }
          std::vector<const Matrix*> weight_views;
          for (std::size_t i : prunable_idx) {
            weight_views.push_back(ste ? &dense[i] : net_ws[i]);
          }
          std::vector<const Matrix*> grad_views;
          for (const Matrix& g : saliency_grads) grad_views.push_back(&g);
          prune_step(pstate, weight_views, grad_views, opt_step, total_opt_steps);
          sync_effective();
          ev.lipschitz_after = surrogate_lipschitz(net);
          ev.sparsity_scheduled =
              scheduled_sparsity(prune_cfg.schedule, opt_step, total_opt_steps,
                                 prune_cfg.burn_in_fraction, prune_cfg.target_sparsity);
          ev.sparsity_realized = pstate.realized_sparsity();
          ev.prunable_params = pstate.total_params();
          result.prune_events.push_back(ev);
        }

        acc_pi += tape.scalar(loss.loss_pi);
        acc_v += tape.scalar(loss.loss_v);
        acc_ent += tape.scalar(nodes.entropy_mean);
        acc_rsa += rsa_value;
        ++n_minibatch_steps;
      }
    }

    const auto [ret_mean, ret_std] = tracker.stats();
    um.return_mean = ret_mean;
    um.return_std = ret_std;
    const double denom = static_cast<double>(n_minibatch_steps);
    um.loss_pi = acc_pi / denom;
    um.loss_v = acc_v / denom;
    um.entropy = acc_ent / denom;
    um.r_sa = acc_rsa / denom;
    um.sparsity = pruning ? pstate.realized_sparsity() : 0.0;
    um.lipschitz = surrogate_lipschitz(net);
    um.grad_norm = max_postclip_norm;
    result.metrics.push_back(um);
    metrics_csv.add_row(metrics_csv_row(um));

    if (!checkpoint_prefix.empty() && cfg.checkpoint_interval > 0 &&
        (update + 1) % cfg.checkpoint_interval == 0) {
      save_policy(checkpoint_prefix + "_update" + std::to_string(update + 1) + ".json",
                  net);
    }
  }

  if (!metrics_csv_path.empty()) metrics_csv.write_file(metrics_csv_path);
  if (!checkpoint_prefix.empty()) save_policy(checkpoint_prefix + "_final.json", net);
  result.net = std::move(net);
  return result;
}

}  // namespace prunecert
