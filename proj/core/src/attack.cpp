#include "prunecert/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "prunecert/csv.hpp"
#include "prunecert/rng.hpp"

namespace prunecert {

std::size_t AdversaryNet::input_dim() const {
  if (trunk.empty()) throw std::logic_error("empty adversary network");
  return trunk.front().w.cols;
}

namespace {

DenseLayer make_linear_head(std::size_t out, std::size_t in, double gain,
                            std::mt19937_64& rng) {
  DenseLayer l;
  l.w = orthogonal_init(out, in, gain, rng);
  l.b.assign(out, 0.0);
  l.act = Activation::kIdentity;
  return l;
}

std::vector<DenseLayer> make_hidden_trunk(std::size_t in,
                                          std::span<const std::size_t> hidden,
                                          Activation act, std::mt19937_64& rng) {
  std::vector<DenseLayer> trunk;
  std::size_t d = in;
  for (std::size_t h : hidden) {
    DenseLayer l;
    l.w = orthogonal_init(h, d, std::sqrt(2.0), rng);
    l.b.assign(h, 0.0);
    l.act = act;
    trunk.push_back(std::move(l));
    d = h;
  }
  return trunk;
}

std::vector<double> layer_apply(const DenseLayer& l, std::span<const double> x) {
  std::vector<double> y(l.w.rows);
  for (std::size_t i = 0; i < l.w.rows; ++i) {
    const double* wi = l.w.data.data() + i * l.w.cols;
    double acc = l.b[i];
    for (std::size_t j = 0; j < l.w.cols; ++j) acc += wi[j] * x[j];
    y[i] = acc;
  }
  return y;
}

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kSigmaMin = 1e-4;

}  // namespace

AdversaryNet make_gaussian_adversary(std::size_t obs_dim,
                                     std::span<const std::size_t> hidden,
                                     Activation act, std::mt19937_64& rng,
                                     double init_sigma) {
  AdversaryNet adv;
  adv.categorical = false;
  adv.trunk = make_hidden_trunk(obs_dim, hidden, act, rng);
  const std::size_t h = adv.trunk.empty() ? obs_dim : adv.trunk.back().w.rows;
  adv.head_mu = make_linear_head(obs_dim, h, 0.01, rng);
  adv.head_logsigma = make_linear_head(obs_dim, h, 0.01, rng);
  const double ls = std::log(std::max(init_sigma, 2e-4));
  std::fill(adv.head_logsigma.b.begin(), adv.head_logsigma.b.end(), ls);
  adv.head_mask = make_linear_head(1, h, 0.01, rng);
  // critic is its own small trunk
  adv.critic = make_hidden_trunk(obs_dim, hidden, act, rng);
  adv.critic.push_back(make_linear_head(1, h, 1.0, rng));
  return adv;
}

AdversaryNet make_categorical_adversary(std::size_t obs_dim, std::size_t tiles,
                                        std::size_t blocks,
                                        std::span<const std::size_t> hidden,
                                        Activation act, std::mt19937_64& rng) {
  AdversaryNet adv;
  adv.categorical = true;
  adv.tiles = tiles;
  adv.blocks = blocks;
  adv.trunk = make_hidden_trunk(obs_dim, hidden, act, rng);
  const std::size_t h = adv.trunk.empty() ? obs_dim : adv.trunk.back().w.rows;
  adv.head_tiles = make_linear_head(tiles * blocks, h, 0.01, rng);
  adv.head_mask = make_linear_head(1, h, 0.01, rng);
  adv.critic = make_hidden_trunk(obs_dim, hidden, act, rng);
  adv.critic.push_back(make_linear_head(1, h, 1.0, rng));
  return adv;
}

std::string attack_name(AttackFamily f) {
  switch (f) {
    case AttackFamily::kNone: return "clean";
    case AttackFamily::kRandom: return "random";
    case AttackFamily::kValue: return "value";
    case AttackFamily::kMad: return "mad";
    case AttackFamily::kRs: return "rs";
    case AttackFamily::kLearned: return "learned";
  }
  return "clean";
}

AttackFamily attack_from_name(const std::string& name) {
  if (name == "clean" || name == "none") return AttackFamily::kNone;
  if (name == "random") return AttackFamily::kRandom;
  if (name == "value") return AttackFamily::kValue;
  if (name == "mad") return AttackFamily::kMad;
  if (name == "rs") return AttackFamily::kRs;
  if (name == "learned") return AttackFamily::kLearned;
  throw std::invalid_argument("unknown attack: " + name);
}

std::vector<double> random_attack(std::span<const double> s, const AttackSpec& spec,
                                  std::mt19937_64& rng) {
  std::vector<double> out(s.begin(), s.end());
  if (spec.epsilon == 0.0) return out;
  if (spec.norm_p == NormP::kLinf) {
    for (double& v : out) v += uniform_range(rng, -spec.epsilon, spec.epsilon);
    return out;
  }
  // uniform in the l2 ball: gaussian direction, radius eps * U^(1/D)
  const std::size_t d = s.size();
  std::vector<double> dir(d);
  double norm = 0.0;
  for (double& v : dir) {
    v = gauss(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) return out;
  const double radius =
      spec.epsilon * std::pow(uniform01(rng), 1.0 / static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i) out[i] += radius * dir[i] / norm;
  return out;
}

namespace {

double sgn_pos(double g) { return g >= 0.0 ? 1.0 : -1.0; }

// KL(pi(.|s) || pi(.|s_hat)) for a single state, plus its gradient w.r.t.
// s_hat, used by the MAD ascent.
double kl_and_grad(const PolicyNetwork& net, const ActionDistribution& clean,
                   std::span<const double> s_hat, std::vector<double>* grad_out) {
  Tape tape;
  Tape::Id sh = tape.leaf(Matrix::row(s_hat));
  Tape::Id out = trunk_forward_tape(tape, net.actor, sh);
  Tape::Id objective;
  if (net.head == HeadFamily::kGaussian) {
    std::vector<double> inv2s2(net.sigma.size());
    for (std::size_t j = 0; j < net.sigma.size(); ++j) {
      inv2s2[j] = 1.0 / (2.0 * net.sigma[j] * net.sigma[j]);
    }
    Tape::Id diff = tape.sub(tape.constant(Matrix::row(clean.mean)), out);
    objective = tape.sum_all(tape.mul_row_const(tape.square(diff), inv2s2));
  } else {
    const std::size_t k = clean.probs.size();
    Tape::Id cross = tape.row_sum(tape.mul(tape.constant(Matrix::row(clean.probs)), out));
    objective = tape.sum_all(tape.sub(tape.logsumexp_blocks(out, k), cross));
  }
  const double base = tape.scalar(objective);
  if (grad_out) {
    tape.backward(objective);
    *grad_out = tape.grad(sh).data;
  }
  // categorical objective above drops the constant sum p log p + ... ; return
  // the true KL for best-iterate comparisons
  if (net.head == HeadFamily::kGaussian) return base;
  std::vector<double> sh_vec(s_hat.begin(), s_hat.end());
  return kl(clean, forward(net, sh_vec).dist);
}

}  // namespace

std::vector<double> mad_attack(const PolicyNetwork& net, std::span<const double> s,
                               const AttackSpec& spec, std::mt19937_64& rng) {
  std::vector<double> best(s.begin(), s.end());
  if (spec.epsilon == 0.0) return best;
  const ActionDistribution clean = forward(net, s).dist;
  const double step = spec.resolved_pgd_step();

  std::vector<double> x(s.begin(), s.end());
  for (double& v : x) {
    v += spec.jitter_scale * spec.epsilon * uniform_range(rng, -1.0, 1.0);
  }
  double best_kl = 0.0;  // the clean point has KL 0
  std::vector<double> grad;
  for (std::size_t it = 0; it < spec.pgd_steps; ++it) {
    const double obj = kl_and_grad(net, clean, x, &grad);
    if (obj > best_kl) {
      best_kl = obj;
      best = x;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(x[i] + step * sgn_pos(grad[i]), s[i] - spec.epsilon,
                        s[i] + spec.epsilon);
    }
  }
  const double obj = kl_and_grad(net, clean, x, nullptr);
  if (obj > best_kl) best = x;
  return best;
}

std::vector<double> value_attack(const PolicyNetwork& net, std::span<const double> s,
                                 const AttackSpec& spec) {
  std::vector<double> best(s.begin(), s.end());
  if (spec.epsilon == 0.0) return best;
  double best_v = value_forward(net, s);
  const double step = spec.resolved_pgd_step();
  std::vector<double> x(s.begin(), s.end());
  for (std::size_t it = 0; it < spec.pgd_steps; ++it) {
    Tape tape;
    Tape::Id sh = tape.leaf(Matrix::row(x));
    Tape::Id v = trunk_forward_tape(tape, net.critic, sh);
    tape.backward(v);
    const Matrix& grad = tape.grad(sh);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(x[i] - step * sgn_pos(grad.data[i]), s[i] - spec.epsilon,
                        s[i] + spec.epsilon);
    }
    const double vx = value_forward(net, x);
    if (vx < best_v) {
      best_v = vx;
      best = x;
    }
  }
  return best;
}

double QModel::q_continuous(std::span<const double> obs,
                            std::span<const double> action) const {
  std::vector<double> in(obs.begin(), obs.end());
  in.insert(in.end(), action.begin(), action.end());
  return trunk_forward(layers, in)[0];
}

std::vector<double> QModel::q_discrete(std::span<const double> obs) const {
  return trunk_forward(layers, obs);
}

namespace {

struct SarsaTuple {
  std::vector<double> obs;
  std::vector<double> act_cont;
  std::size_t act_disc = 0;
  double reward = 0.0;
  std::vector<double> next_obs;
  std::vector<double> next_act_cont;
  std::size_t next_act_disc = 0;
  bool done = false;
};

std::vector<SarsaTuple> collect_sarsa_buffer(const PolicyNetwork& victim,
                                             const Environment& env,
                                             std::size_t transitions,
                                             std::mt19937_64& rng) {
  std::vector<SarsaTuple> buffer;
  buffer.reserve(transitions);
  const bool discrete = env.spec().discrete_actions;
  while (buffer.size() < transitions) {
    std::vector<double> state = env.reset(rng);
    std::vector<double> obs = env.observe(state);
    ForwardResult fwd = forward(victim, obs);
    Action action;
    std::vector<double> act_cont;
    std::size_t act_disc = 0;
    if (discrete) {
      act_disc = sample_categorical(fwd.dist, rng);
      action = act_disc;
    } else {
      act_cont = sample_gaussian(fwd.dist, rng);
      action = act_cont;
    }
    for (;;) {
      Transition tr = env.step(state, action);
      SarsaTuple tup;
      tup.obs = obs;
      tup.act_cont = act_cont;
      tup.act_disc = act_disc;
      tup.reward = tr.reward;
      tup.done = tr.done;
      tup.next_obs = env.observe(tr.next_state);
      if (!tr.done) {
        ForwardResult nfwd = forward(victim, tup.next_obs);
        if (discrete) {
          tup.next_act_disc = sample_categorical(nfwd.dist, rng);
          action = tup.next_act_disc;
        } else {
          tup.next_act_cont = sample_gaussian(nfwd.dist, rng);
          action = tup.next_act_cont;
        }
        state = tr.next_state;
        obs = tup.next_obs;
        act_cont = tup.next_act_cont;
        act_disc = tup.next_act_disc;
      }
      buffer.push_back(std::move(tup));
      if (buffer.back().done || buffer.size() >= transitions) break;
    }
  }
  return buffer;
}

}  // namespace

QModel fit_robust_q(const PolicyNetwork& victim, const Environment& env,
                    const AttackSpec& spec, double gamma, std::mt19937_64& rng) {
  const bool discrete = env.spec().discrete_actions;
  const std::size_t obs_dim = env.spec().obs_dim;
  const std::size_t act_dim = discrete ? env.spec().action_dim : victim.output_dim();

  QModel q;
  q.discrete = discrete;
  q.obs_dim = obs_dim;
  q.act_dim = act_dim;
  const std::size_t in_dim = discrete ? obs_dim : obs_dim + act_dim;
  const std::size_t out_dim = discrete ? act_dim : 1;
  const std::vector<std::size_t> hidden{spec.rs.q_hidden, spec.rs.q_hidden};
  q.layers = make_hidden_trunk(in_dim, hidden, Activation::kRelu, rng);
  q.layers.push_back(make_linear_head(out_dim, spec.rs.q_hidden, 1.0, rng));

  std::vector<SarsaTuple> buffer =
      collect_sarsa_buffer(victim, env, spec.rs.buffer_transitions, rng);

  AdamOptimizer adam(spec.rs.lr);
  {
    std::vector<std::span<double>> params;
    for (DenseLayer& l : q.layers) params.emplace_back(l.w.data);
    for (DenseLayer& l : q.layers) params.emplace_back(l.b);
    adam.attach(std::move(params));
  }

  const double perturb = spec.rs.robust_perturb_scale * spec.epsilon;
  const std::size_t mb = std::min(spec.rs.minibatch, buffer.size());
  std::vector<std::size_t> order(buffer.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < spec.rs.td_epochs; ++epoch) {
    // semi-gradient targets from a frozen snapshot, successors perturbed
    const QModel snapshot = q;
    std::vector<double> targets(buffer.size());
    std::vector<double> pert(obs_dim);
    for (std::size_t i = 0; i < buffer.size(); ++i) {
      const SarsaTuple& t = buffer[i];
      double y = t.reward;
      if (!t.done) {
        for (std::size_t j = 0; j < obs_dim; ++j) {
          pert[j] = t.next_obs[j] + uniform_range(rng, -perturb, perturb);
        }
        y += gamma * (discrete ? snapshot.q_discrete(pert)[t.next_act_disc]
                               : snapshot.q_continuous(pert, t.next_act_cont));
      }
      targets[i] = y;
    }
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const std::size_t j =
          static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }
    for (std::size_t start = 0; start + mb <= buffer.size(); start += mb) {
      Matrix in(mb, in_dim);
      std::vector<double> y(mb);
      std::vector<std::size_t> acts(mb);
      for (std::size_t r = 0; r < mb; ++r) {
        const SarsaTuple& t = buffer[order[start + r]];
        for (std::size_t j = 0; j < obs_dim; ++j) in(r, j) = t.obs[j];
        if (!discrete) {
          for (std::size_t j = 0; j < act_dim; ++j) in(r, obs_dim + j) = t.act_cont[j];
        } else {
          acts[r] = t.act_disc;
        }
        y[r] = targets[order[start + r]];
      }
      Tape tape;
      std::vector<Tape::Id> ws, bs;
      Tape::Id out =
          trunk_forward_tape(tape, q.layers, tape.constant(in), &ws, &bs);
      Tape::Id pred =
          discrete ? tape.select_per_block(out, act_dim, acts) : out;
      Tape::Id loss =
          tape.mean_all(tape.square(tape.sub(pred, tape.constant(Matrix::column(y)))));
      tape.backward(loss);
      std::vector<std::vector<double>> grads;
      for (Tape::Id w : ws) grads.push_back(tape.grad(w).data);
      for (Tape::Id b : bs) grads.push_back(tape.grad(b).data);
      adam.step(grads);
    }
  }
  return q;
}

std::vector<double> rs_attack(const PolicyNetwork& victim, const QModel& q,
                              std::span<const double> s, const AttackSpec& spec) {
  std::vector<double> best(s.begin(), s.end());
  if (spec.epsilon == 0.0) return best;
  const double step = spec.resolved_pgd_step();

  auto objective_and_grad = [&](std::span<const double> x, std::vector<double>* grad) {
    Tape tape;
    Tape::Id sh = tape.leaf(Matrix::row(x));
    Tape::Id mean_action = trunk_forward_tape(tape, victim.actor, sh);
    Tape::Id obj;
    if (q.discrete) {
      Tape::Id p = tape.softmax_blocks(mean_action, victim.output_dim());
      const std::vector<double> qv = q.q_discrete(s);
      obj = tape.row_sum(tape.mul(p, tape.constant(Matrix::row(qv))));
    } else {
      Tape::Id qin = tape.concat_cols(tape.constant(Matrix::row(s)), mean_action);
      obj = trunk_forward_tape(tape, q.layers, qin);
    }
    Tape::Id scalar_obj = tape.sum_all(obj);
    const double v = tape.scalar(scalar_obj);
    if (grad) {
      tape.backward(scalar_obj);
      *grad = tape.grad(sh).data;
    }
    return v;
  };

  double best_q = objective_and_grad(best, nullptr);
  std::vector<double> x(s.begin(), s.end());
  std::vector<double> grad;
  for (std::size_t it = 0; it < spec.pgd_steps; ++it) {
    objective_and_grad(x, &grad);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(x[i] - step * sgn_pos(grad[i]), s[i] - spec.epsilon,
                        s[i] + spec.epsilon);
    }
    const double v = objective_and_grad(x, nullptr);
    if (v < best_q) {
      best_q = v;
      best = x;
    }
  }
  return best;
}

namespace {

struct AdvForwardCont {
  std::vector<double> hidden;
  std::vector<double> mu;
  std::vector<double> sigma;
};

AdvForwardCont adv_forward_cont(const AdversaryNet& adv, std::span<const double> s,
                                double eps) {
  AdvForwardCont f;
  f.hidden = trunk_forward(adv.trunk, s);
  f.mu = layer_apply(adv.head_mu, f.hidden);
  f.sigma = layer_apply(adv.head_logsigma, f.hidden);
  const double hi = std::max(eps, kSigmaMin);
  for (double& v : f.sigma) v = std::clamp(std::exp(v), kSigmaMin, hi);
  return f;
}

double adv_value(const AdversaryNet& adv, std::span<const double> s) {
  return trunk_forward(adv.critic, s)[0];
}

double mask_log_prob(bool on, double r) {
  if (r <= 0.0) return 0.0;  // mask always off
  if (r >= 1.0) return 0.0;  // mask always on
  return on ? std::log(r) : std::log(1.0 - r);
}

}  // namespace

LearnedStepResult learned_adversary_step(const AdversaryNet& adv,
                                         std::span<const double> s,
                                         const AttackSpec& spec,
                                         std::mt19937_64& rng) {
  LearnedStepResult res;
  res.s_hat.assign(s.begin(), s.end());
  if (!adv.categorical) {
    const AdvForwardCont f = adv_forward_cont(adv, s, spec.epsilon);
    const std::size_t d = s.size();
    res.delta_preclamp.resize(d);
    double logp = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double z = gauss(rng);
      const double delta = f.mu[j] + f.sigma[j] * z;
      res.delta_preclamp[j] = delta;
      logp += -0.5 * z * z - std::log(f.sigma[j]) - 0.5 * kLog2Pi;
    }
    res.logp_delta = logp;
    res.mask_on = bernoulli(rng, spec.attack_rate);
    res.logp_mask = mask_log_prob(res.mask_on, spec.attack_rate);
    if (res.mask_on) {
      double norm_sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double applied =
            std::clamp(res.delta_preclamp[j], -spec.epsilon, spec.epsilon);
        res.s_hat[j] = s[j] + applied;
        norm_sq += applied * applied;
      }
      res.stealth = std::sqrt(norm_sq);
    }
    return res;
  }

  // categorical: per-tile block flips
  const std::size_t tiles = adv.tiles;
  const std::size_t blocks = adv.blocks;
  if (s.size() != tiles * blocks) {
    throw std::invalid_argument("learned adversary: observation is not tiled");
  }
  const std::vector<double> hidden = trunk_forward(adv.trunk, s);
  const std::vector<double> logits = layer_apply(adv.head_tiles, hidden);
  res.tile_choice.resize(tiles);
  double logp = 0.0;
  for (std::size_t i = 0; i < tiles; ++i) {
    std::vector<double> block(logits.begin() + i * blocks,
                              logits.begin() + (i + 1) * blocks);
    const std::vector<double> p = softmax(block);
    const std::size_t b = categorical_index(rng, p);
    res.tile_choice[i] = b;
    logp += std::log(std::max(p[b], 1e-300));
  }
  res.logp_delta = logp;
  res.mask_on = bernoulli(rng, spec.attack_rate);
  res.logp_mask = mask_log_prob(res.mask_on, spec.attack_rate);
  if (res.mask_on) {
    std::size_t hamming = 0;
    for (std::size_t i = 0; i < tiles; ++i) {
      std::size_t orig = 0;
      for (std::size_t k = 1; k < blocks; ++k) {
        if (s[i * blocks + k] > s[i * blocks + orig]) orig = k;
      }
      if (res.tile_choice[i] != orig) ++hamming;
      for (std::size_t k = 0; k < blocks; ++k) {
        res.s_hat[i * blocks + k] = (k == res.tile_choice[i]) ? 1.0 : 0.0;
      }
    }
    res.stealth = static_cast<double>(hamming);
  }
  return res;
}

namespace {

struct AdvRollout {
  Matrix obs;
  std::vector<std::vector<double>> delta_actions;
  std::vector<std::vector<std::size_t>> tile_actions;
  std::vector<double> log_probs;   // delta + mask
  std::vector<double> mask_logps;  // constant part, re-added on the tape
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::uint8_t> dones;
  std::vector<double> bootstrap;
  std::vector<double> advantages;
  std::vector<double> returns;
};

struct AdvParamPack {
  std::vector<Matrix*> ws;
  std::vector<std::vector<double>*> bs;
};

AdvParamPack adversary_params(AdversaryNet& adv) {
  AdvParamPack p;
  auto add = [&p](DenseLayer& l) {
    p.ws.push_back(&l.w);
    p.bs.push_back(&l.b);
  };
  for (DenseLayer& l : adv.trunk) add(l);
  if (!adv.categorical) {
    add(adv.head_mu);
    add(adv.head_logsigma);
  } else {
    add(adv.head_tiles);
  }
  add(adv.head_mask);
  for (DenseLayer& l : adv.critic) add(l);
  return p;
}

}  // namespace

AdversaryTrainResult train_adversary(const PolicyNetwork& victim,
                                     const Environment& env, const AttackSpec& spec,
                                     const PpoConfig& cfg) {
  const EnvSpec& es = env.spec();
  const bool tiled = es.tile_count > 0;
  std::mt19937_64 init_rng(derive_seed(cfg.seed, 10));
  AdversaryNet adv =
      tiled ? make_categorical_adversary(es.obs_dim, es.tile_count, es.tile_blocks,
                                         cfg.hidden_sizes, cfg.activation, init_rng)
            : make_gaussian_adversary(es.obs_dim, cfg.hidden_sizes, cfg.activation,
                                      init_rng, spec.epsilon / 2.0);

  AdvParamPack pack = adversary_params(adv);
  AdamOptimizer adam(cfg.learning_rate);
  {
    std::vector<std::span<double>> params;
    for (Matrix* w : pack.ws) params.emplace_back(w->data);
    for (std::vector<double>* b : pack.bs) params.emplace_back(*b);
    adam.attach(std::move(params));
  }

  std::mt19937_64 victim_rng(derive_seed(cfg.seed, 12));
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 13));
  std::vector<std::mt19937_64> env_rngs, adv_rngs;
  std::vector<std::vector<double>> states;
  for (std::size_t e = 0; e < cfg.num_envs; ++e) {
    env_rngs.emplace_back(derive_seed(cfg.seed, 2000 + e));
    adv_rngs.emplace_back(derive_seed(cfg.seed, 3000 + e));
    states.push_back(env.reset(env_rngs[e]));
  }

  const std::size_t n = cfg.batch_size();
  const std::size_t n_updates = cfg.num_updates();
  const std::size_t mb_size = n / cfg.minibatches;
  if (mb_size == 0 || n % cfg.minibatches != 0) {
    throw std::invalid_argument("train_adversary: batch must divide into minibatches");
  }
  const std::size_t d = es.obs_dim;
  // positive reward rescaling (optimum-preserving) keeps the critic targets
  // at an O(1) scale across the lambda grid
  const double reward_scale = 1.0 / (1.0 + spec.lambda_stealth * spec.epsilon);

  AdversaryTrainResult result;

  for (std::size_t update = 0; update < n_updates; ++update) {
    if (cfg.lr_anneal) {
      adam.set_lr(cfg.learning_rate *
                  (1.0 - static_cast<double>(update) / static_cast<double>(n_updates)));
    }
    AdvRollout roll;
    roll.obs = Matrix(n, d);
    roll.log_probs.resize(n);
    roll.mask_logps.resize(n);
    roll.rewards.resize(n);
    roll.values.resize(n);
    roll.dones.resize(n);
    if (tiled) roll.tile_actions.resize(n);
    else roll.delta_actions.resize(n);

    for (std::size_t t = 0; t < cfg.rollout_len; ++t) {
      for (std::size_t e = 0; e < cfg.num_envs; ++e) {
        const std::size_t i = t * cfg.num_envs + e;
        const std::vector<double> obs = env.observe(states[e]);
        for (std::size_t j = 0; j < d; ++j) roll.obs(i, j) = obs[j];
        const LearnedStepResult step = learned_adversary_step(adv, obs, spec, adv_rngs[e]);
        const ForwardResult vic = forward(victim, step.s_hat);
        Action va;
        if (es.discrete_actions) va = sample_categorical(vic.dist, victim_rng);
        else va = sample_gaussian(vic.dist, victim_rng);
        Transition tr = env.step(states[e], va);
        roll.rewards[i] =
            reward_scale * (-tr.reward - spec.lambda_stealth * step.stealth);
        if (tr.truncated) {
          roll.rewards[i] += cfg.gamma * adv_value(adv, env.observe(tr.next_state));
        }
        roll.values[i] = adv_value(adv, obs);
        roll.dones[i] = tr.done ? 1 : 0;
        roll.log_probs[i] = step.logp_delta + step.logp_mask;
        roll.mask_logps[i] = step.logp_mask;
        if (tiled) roll.tile_actions[i] = step.tile_choice;
        else roll.delta_actions[i] = step.delta_preclamp;
        states[e] = tr.done ? env.reset(env_rngs[e]) : tr.next_state;
      }
    }
    roll.bootstrap.resize(cfg.num_envs);
    for (std::size_t e = 0; e < cfg.num_envs; ++e) {
      roll.bootstrap[e] = adv_value(adv, env.observe(states[e]));
    }
    roll.advantages.resize(n);
    roll.returns.resize(n);
    {
      std::vector<double> r(cfg.rollout_len), v(cfg.rollout_len), a(cfg.rollout_len),
          g(cfg.rollout_len);
      std::vector<std::uint8_t> dn(cfg.rollout_len);
      for (std::size_t e = 0; e < cfg.num_envs; ++e) {
        for (std::size_t t = 0; t < cfg.rollout_len; ++t) {
          const std::size_t i = t * cfg.num_envs + e;
          r[t] = roll.rewards[i];
          v[t] = roll.values[i];
          dn[t] = roll.dones[i];
        }
        gae(r, v, dn, roll.bootstrap[e], cfg.gamma, cfg.gae_lambda, a, g);
        for (std::size_t t = 0; t < cfg.rollout_len; ++t) {
          const std::size_t i = t * cfg.num_envs + e;
          roll.advantages[i] = a[t];
          roll.returns[i] = g[t];
        }
      }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    UpdateMetrics um;
    um.step = (update + 1) * n;
    double acc_pi = 0.0, acc_v = 0.0, acc_ent = 0.0;
    std::size_t steps = 0;

    for (std::size_t epoch = 0; epoch < cfg.update_epochs; ++epoch) {
      for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j =
            static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i + 1));
        std::swap(order[i], order[std::min(j, i)]);
      }
      for (std::size_t mb = 0; mb < cfg.minibatches; ++mb) {
        std::span<const std::size_t> idx(order.data() + mb * mb_size, mb_size);
        Matrix obs_mb(mb_size, d);
        std::vector<double> old_logp(mb_size), adv_raw(mb_size), ret(mb_size),
            mask_lp(mb_size);
        for (std::size_t r = 0; r < mb_size; ++r) {
          const std::size_t i = idx[r];
          for (std::size_t j = 0; j < d; ++j) obs_mb(r, j) = roll.obs(i, j);
          old_logp[r] = roll.log_probs[i];
          adv_raw[r] = roll.advantages[i];
          ret[r] = roll.returns[i];
          mask_lp[r] = roll.mask_logps[i];
        }
        const std::vector<double> norm_adv = normalize_advantages(adv_raw);

        Tape tape;
        std::vector<Tape::Id> trunk_ws, trunk_bs;
        Tape::Id obs_node = tape.constant(obs_mb);
        Tape::Id hidden = trunk_forward_tape(tape, adv.trunk, obs_node, &trunk_ws, &trunk_bs);
        std::vector<Tape::Id> head_ws, head_bs;
        auto head_forward = [&](const DenseLayer& l, Tape::Id in) {
          Tape::Id w = tape.leaf(l.w);
          Tape::Id b = tape.leaf(Matrix::row(l.b));
          head_ws.push_back(w);
          head_bs.push_back(b);
          return tape.add_row(tape.matmul_nt(in, w), b);
        };

        Tape::Id logp_delta, entropy_mean;
        if (!tiled) {
          Tape::Id mu = head_forward(adv.head_mu, hidden);
          Tape::Id logsig = head_forward(adv.head_logsigma, hidden);
          Tape::Id sigma = tape.clamp(tape.exp_(logsig), kSigmaMin,
                                      std::max(spec.epsilon, kSigmaMin));
          Matrix deltas(mb_size, d);
          for (std::size_t r = 0; r < mb_size; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              deltas(r, j) = roll.delta_actions[idx[r]][j];
            }
          }
          Tape::Id diff = tape.sub(tape.constant(deltas), mu);
          Tape::Id quad =
              tape.div(tape.square(diff), tape.scale(tape.square(sigma), 2.0));
          Tape::Id logsig_clamped = tape.log_(sigma);
          Tape::Id row = tape.row_sum(tape.add(quad, logsig_clamped));
          logp_delta = tape.add_scalar(tape.scale(row, -1.0),
                                       -0.5 * kLog2Pi * static_cast<double>(d));
          entropy_mean = tape.mean_all(tape.add_scalar(
              tape.row_sum(logsig_clamped),
              0.5 * (1.0 + kLog2Pi) * static_cast<double>(d)));
        } else {
          Tape::Id z = head_forward(adv.head_tiles, hidden);
          std::vector<std::size_t> flat(mb_size * adv.tiles);
          for (std::size_t r = 0; r < mb_size; ++r) {
            for (std::size_t ti = 0; ti < adv.tiles; ++ti) {
              flat[r * adv.tiles + ti] = roll.tile_actions[idx[r]][ti];
            }
          }
          Tape::Id sel = tape.select_per_block(z, adv.blocks, flat);
          Tape::Id lse = tape.logsumexp_blocks(z, adv.blocks);
          logp_delta = tape.row_sum(tape.sub(sel, lse));
          Tape::Id p = tape.softmax_blocks(z, adv.blocks);
          entropy_mean = tape.mean_all(
              tape.sub(tape.row_sum(lse), tape.row_sum(tape.mul(p, z))));
        }
        Tape::Id logp = tape.add(logp_delta, tape.constant(Matrix::column(mask_lp)));

        std::vector<Tape::Id> critic_ws, critic_bs;
        Tape::Id value =
            trunk_forward_tape(tape, adv.critic, obs_node, &critic_ws, &critic_bs);

        PpoLossNodes loss = build_ppo_loss(tape, logp, value, entropy_mean, old_logp,
                                           norm_adv, ret, cfg);
        if (!std::isfinite(tape.scalar(loss.total))) {
          throw std::runtime_error("train_adversary: non-finite loss");
        }
        tape.backward(loss.total);

        // gradient pack aligned with adversary_params order (trunk, heads,
        // mask head, critic), weights first then biases; the mask head is
        // architectural only and gets a zero gradient
        std::vector<std::vector<double>> packed;
        packed.reserve(2 * pack.ws.size());
        for (Tape::Id w : trunk_ws) packed.push_back(tape.grad(w).data);
        for (Tape::Id w : head_ws) packed.push_back(tape.grad(w).data);
        packed.emplace_back(adv.head_mask.w.data.size(), 0.0);
        for (Tape::Id w : critic_ws) packed.push_back(tape.grad(w).data);
        for (Tape::Id b : trunk_bs) packed.push_back(tape.grad(b).data);
        for (Tape::Id b : head_bs) packed.push_back(tape.grad(b).data);
        packed.emplace_back(adv.head_mask.b.size(), 0.0);
        for (Tape::Id b : critic_bs) packed.push_back(tape.grad(b).data);
        clip_global_norm(packed, cfg.max_grad_norm);
        adam.step(packed);

        acc_pi += tape.scalar(loss.loss_pi);
        acc_v += tape.scalar(loss.loss_v);
        acc_ent += tape.scalar(entropy_mean);
        ++steps;
      }
    }
    um.loss_pi = acc_pi / static_cast<double>(steps);
    um.loss_v = acc_v / static_cast<double>(steps);
    um.entropy = acc_ent / static_cast<double>(steps);
    result.metrics.push_back(um);
  }

  // post-training measurement of the applied perturbation magnitude
  {
    std::mt19937_64 measure_rng(derive_seed(cfg.seed, 99));
    std::vector<double> state = env.reset(measure_rng);
    double acc = 0.0;
    const std::size_t steps = 4096;
    for (std::size_t i = 0; i < steps; ++i) {
      const std::vector<double> obs = env.observe(state);
      const LearnedStepResult st = learned_adversary_step(adv, obs, spec, measure_rng);
      double sq = 0.0;
      for (std::size_t j = 0; j < obs.size(); ++j) {
        const double dd = st.s_hat[j] - obs[j];
        sq += dd * dd;
      }
      acc += std::sqrt(sq);
      const ForwardResult vic = forward(victim, st.s_hat);
      Action va;
      if (es.discrete_actions) va = sample_categorical(vic.dist, measure_rng);
      else va = sample_gaussian(vic.dist, measure_rng);
      Transition tr = env.step(state, va);
      state = tr.done ? env.reset(measure_rng) : tr.next_state;
    }
    result.final_mean_delta = acc / static_cast<double>(steps);
  }

  result.net = std::move(adv);
  return result;
}

namespace {

class NoneApplier final : public StateAttack {
 public:
  std::vector<double> perturb(std::span<const double> obs, std::mt19937_64&) override {
    return {obs.begin(), obs.end()};
  }
};

class RandomApplier final : public StateAttack {
 public:
  explicit RandomApplier(AttackSpec spec) : spec_(std::move(spec)) {}
  std::vector<double> perturb(std::span<const double> obs, std::mt19937_64& rng) override {
    return random_attack(obs, spec_, rng);
  }

 private:
  AttackSpec spec_;
};

class MadApplier final : public StateAttack {
 public:
  MadApplier(AttackSpec spec, const PolicyNetwork& victim)
      : spec_(std::move(spec)), victim_(victim) {}
  std::vector<double> perturb(std::span<const double> obs, std::mt19937_64& rng) override {
    return mad_attack(victim_, obs, spec_, rng);
  }

 private:
  AttackSpec spec_;
  const PolicyNetwork& victim_;
};

class ValueApplier final : public StateAttack {
 public:
  ValueApplier(AttackSpec spec, const PolicyNetwork& victim)
      : spec_(std::move(spec)), victim_(victim) {}
  std::vector<double> perturb(std::span<const double> obs, std::mt19937_64&) override {
    return value_attack(victim_, obs, spec_);
  }

 private:
  AttackSpec spec_;
  const PolicyNetwork& victim_;
};

class RsApplier final : public StateAttack {
 public:
  RsApplier(AttackSpec spec, const PolicyNetwork& victim, const Environment& env,
            double gamma, std::mt19937_64& rng)
      : spec_(std::move(spec)), victim_(victim) {
    q_ = fit_robust_q(victim, env, spec_, gamma, rng);
  }
  std::vector<double> perturb(std::span<const double> obs, std::mt19937_64&) override {
    return rs_attack(victim_, q_, obs, spec_);
  }

 private:
  AttackSpec spec_;
  const PolicyNetwork& victim_;
  QModel q_;
};

class LearnedApplier final : public StateAttack {
 public:
  explicit LearnedApplier(AttackSpec spec) : spec_(std::move(spec)) {
    if (!spec_.adversary) {
      throw std::invalid_argument("learned attack: adversary network not provided");
    }
  }
  std::vector<double> perturb(std::span<const double> obs, std::mt19937_64& rng) override {
    return learned_adversary_step(*spec_.adversary, obs, spec_, rng).s_hat;
  }

 private:
  AttackSpec spec_;
};

}  // namespace

std::unique_ptr<StateAttack> make_attack(const AttackSpec& spec,
                                         const PolicyNetwork& victim,
                                         const Environment& env, double gamma,
                                         std::mt19937_64& setup_rng) {
  switch (spec.family) {
    case AttackFamily::kNone: return std::make_unique<NoneApplier>();
    case AttackFamily::kRandom: return std::make_unique<RandomApplier>(spec);
    case AttackFamily::kMad: return std::make_unique<MadApplier>(spec, victim);
    case AttackFamily::kValue: return std::make_unique<ValueApplier>(spec, victim);
    case AttackFamily::kRs:
      return std::make_unique<RsApplier>(spec, victim, env, gamma, setup_rng);
    case AttackFamily::kLearned: return std::make_unique<LearnedApplier>(spec);
  }
  return std::make_unique<NoneApplier>();
}

EvalResult evaluate(const PolicyNetwork& victim, const Environment& env,
                    StateAttack* attack, std::size_t episodes, std::mt19937_64& rng) {
  if (episodes == 0) throw std::invalid_argument("evaluate: episodes must be >= 1");
  EvalResult out;
  double tv_acc = 0.0, delta_acc = 0.0;
  std::size_t steps = 0;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    std::vector<double> state = env.reset(rng);
    double ep_return = 0.0;
    for (;;) {
      const std::vector<double> obs = env.observe(state);
      std::vector<double> fed = attack ? attack->perturb(obs, rng) : obs;
      const ActionDistribution clean_dist = forward(victim, obs).dist;
      const ForwardResult fwd = forward(victim, fed);
      tv_acc += tv_exact(clean_dist, fwd.dist);
      double sq = 0.0;
      for (std::size_t j = 0; j < obs.size(); ++j) {
        const double dd = fed[j] - obs[j];
        sq += dd * dd;
      }
      delta_acc += std::sqrt(sq);
      ++steps;
      Action a;
      if (env.spec().discrete_actions) a = sample_categorical(fwd.dist, rng);
      else a = sample_gaussian(fwd.dist, rng);
      Transition tr = env.step(state, a);
      ep_return += tr.reward;
      if (tr.done) break;
      state = tr.next_state;
    }
    out.per_episode.push_back(ep_return);
  }
  double mean = 0.0;
  for (double r : out.per_episode) mean += r;
  mean /= static_cast<double>(episodes);
  out.mean = mean;
  if (episodes > 1) {
    double var = 0.0;
    for (double r : out.per_episode) var += (r - mean) * (r - mean);
    out.stddev = std::sqrt(var / static_cast<double>(episodes - 1));
    out.sem = out.stddev / std::sqrt(static_cast<double>(episodes));
    out.ci95 = 1.96 * *out.sem;
  }
  out.f_hat = steps > 0 ? tv_acc / static_cast<double>(steps) : 0.0;
  out.mean_delta_l2 = steps > 0 ? delta_acc / static_cast<double>(steps) : 0.0;
  return out;
}

std::vector<std::string> eval_csv_header() {
  return {"attack", "epsilon", "episodes", "mean", "sem", "ci95", "f_hat"};
}

}  // namespace prunecert
