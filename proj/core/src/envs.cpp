#include "prunecert/envs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>

#include "prunecert/rng.hpp"

namespace prunecert {

namespace {

double clip(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

std::vector<double> clip_action(const Action& action, std::size_t dim, double lo,
                                double hi) {
  const auto* vec = std::get_if<std::vector<double>>(&action);
  if (!vec) throw std::invalid_argument("env: expected a continuous action");
  if (vec->size() != dim) throw std::invalid_argument("env: action dimension mismatch");
  std::vector<double> a = *vec;
  for (double& v : a) v = clip(v, lo, hi);
  return a;
}

class PointMassEnv final : public Environment {
 public:
  explicit PointMassEnv(const PointMassParams& p) : params_(p) {
    spec_.name = "point_mass";
    spec_.state_dim = 5;  // px py vx vy t
    spec_.obs_dim = 4;
    spec_.discrete_actions = false;
    spec_.action_dim = 2;
    spec_.action_low = -1.0;
    spec_.action_high = 1.0;
    spec_.horizon = p.horizon;
    spec_.r_max = p.r_max;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(std::mt19937_64& rng) const override {
    const double b = params_.start_box;
    return {uniform_range(rng, -b, b), uniform_range(rng, -b, b), 0.0, 0.0, 0.0};
  }

  Transition step(std::span<const double> state, const Action& action) const override {
    const std::vector<double> a = clip_action(action, 2, -1.0, 1.0);
    Transition tr;
    tr.state.assign(state.begin(), state.end());
    tr.action = a;
    double px = state[0], py = state[1], vx = state[2], vy = state[3];
    // semi-implicit Euler: velocity first, then position
    vx += a[0] * params_.dt;
    vy += a[1] * params_.dt;
    px += vx * params_.dt;
    py += vy * params_.dt;
    const double t = state[4] + 1.0;
    const double dist = std::sqrt(px * px + py * py);
    const double act_cost = params_.action_cost * (a[0] * a[0] + a[1] * a[1]);
    tr.reward = clip(-(dist + act_cost), -params_.r_max, 0.0);
    tr.next_state = {px, py, vx, vy, t};
    tr.truncated = t >= static_cast<double>(params_.horizon);
    tr.done = tr.truncated;
    return tr;
  }

  std::vector<double> observe(std::span<const double> state) const override {
    return {state[0], state[1], state[2], state[3]};
  }

 private:
  PointMassParams params_;
  EnvSpec spec_;
};

class PendulumEnv final : public Environment {
 public:
  explicit PendulumEnv(const PendulumParams& p) : params_(p) {
    spec_.name = "pendulum";
    spec_.state_dim = 3;  // theta omega t
    spec_.obs_dim = 3;    // cos sin omega
    spec_.discrete_actions = false;
    spec_.action_dim = 1;
    spec_.action_low = -p.max_torque;
    spec_.action_high = p.max_torque;
    spec_.horizon = p.horizon;
    spec_.r_max = p.r_max;
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(std::mt19937_64& rng) const override {
    return {uniform_range(rng, -M_PI, M_PI), uniform_range(rng, -1.0, 1.0), 0.0};
  }

  Transition step(std::span<const double> state, const Action& action) const override {
    const std::vector<double> a =
        clip_action(action, 1, -params_.max_torque, params_.max_torque);
    Transition tr;
    tr.state.assign(state.begin(), state.end());
    tr.action = a;
    double th = state[0], om = state[1];
    const double u = a[0];
    const double g = params_.g, m = params_.mass, l = params_.length;
    om += (3.0 * g / (2.0 * l) * std::sin(th) + 3.0 / (m * l * l) * u) * params_.dt;
    om = clip(om, -params_.max_speed, params_.max_speed);
    th += om * params_.dt;
    const double t = state[2] + 1.0;
    const double angle = normalize_angle(th);
    const double cost = angle * angle + 0.1 * om * om + 0.001 * u * u;
    tr.reward = clip(-cost, -params_.r_max, 0.0);
    tr.next_state = {th, om, t};
    tr.truncated = t >= static_cast<double>(params_.horizon);
    tr.done = tr.truncated;
    return tr;
  }

  std::vector<double> observe(std::span<const double> state) const override {
    // theta measured from upright
    return {std::cos(state[0]), std::sin(state[0]), state[1]};
  }

  static double normalize_angle(double th) {
    th = std::fmod(th + M_PI, 2.0 * M_PI);
    if (th < 0) th += 2.0 * M_PI;
    return th - M_PI;
  }

 private:
  PendulumParams params_;
  EnvSpec spec_;
};

class GridWorldEnv final : public Environment {
 public:
  explicit GridWorldEnv(const GridWorldParams& p) : params_(p) {
    if (p.blocks < 3) throw std::invalid_argument("gridworld: needs >= 3 block types");
    if (p.n < 2) throw std::invalid_argument("gridworld: needs n >= 2");
    spec_.name = "gridworld";
    spec_.state_dim = 3;  // row col t
    spec_.obs_dim = p.n * p.n * p.blocks;
    spec_.discrete_actions = true;
    spec_.action_dim = 5;  // up down left right noop
    spec_.horizon = p.horizon;
    spec_.r_max = 1.0;
    spec_.tile_count = p.n * p.n;
    spec_.tile_blocks = p.blocks;
    generate_layout();
  }

  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(std::mt19937_64& rng) const override {
    const std::size_t idx = floor_tiles_[static_cast<std::size_t>(
        uniform01(rng) * static_cast<double>(floor_tiles_.size()))];
    return {static_cast<double>(idx / params_.n), static_cast<double>(idx % params_.n),
            0.0};
  }

  Transition step(std::span<const double> state, const Action& action) const override {
    const auto* idx = std::get_if<std::size_t>(&action);
    if (!idx) throw std::invalid_argument("gridworld: expected a discrete action");
    if (*idx >= 5) throw std::invalid_argument("gridworld: action index out of range");
    Transition tr;
    tr.state.assign(state.begin(), state.end());
    tr.action = action;
    long r = static_cast<long>(state[0]);
    long c = static_cast<long>(state[1]);
    long nr = r, nc = c;
    switch (*idx) {
      case 0: nr = r - 1; break;
      case 1: nr = r + 1; break;
      case 2: nc = c - 1; break;
      case 3: nc = c + 1; break;
      case 4: break;
    }
    const long n = static_cast<long>(params_.n);
    if (nr < 0 || nr >= n || nc < 0 || nc >= n ||
        layout_[static_cast<std::size_t>(nr) * params_.n + static_cast<std::size_t>(nc)] ==
            kBlockWall) {
      nr = r;
      nc = c;
    }
    const double t = state[2] + 1.0;
    const bool at_goal =
        layout_[static_cast<std::size_t>(nr) * params_.n + static_cast<std::size_t>(nc)] ==
        kBlockGoal;
    tr.reward = at_goal ? 1.0 : -params_.step_penalty;
    tr.next_state = {static_cast<double>(nr), static_cast<double>(nc), t};
    tr.truncated = !at_goal && t >= static_cast<double>(params_.horizon);
    tr.done = at_goal || tr.truncated;
    return tr;
  }

  std::vector<double> observe(std::span<const double> state) const override {
    std::vector<double> obs(params_.n * params_.n * params_.blocks, 0.0);
    const std::size_t ar = static_cast<std::size_t>(state[0]);
    const std::size_t ac = static_cast<std::size_t>(state[1]);
    for (std::size_t i = 0; i < params_.n * params_.n; ++i) {
      std::size_t block = layout_[i];
      if (i == ar * params_.n + ac) block = kBlockAgent;
      obs[i * params_.blocks + block] = 1.0;
    }
    return obs;
  }

  const std::vector<std::size_t>& layout() const { return layout_; }
  std::size_t n() const { return params_.n; }

 private:
  void generate_layout() {
    const std::size_t n = params_.n;
    // decorations wanted, in priority order, limited by the block vocabulary
    std::vector<std::size_t> wanted;
    if (params_.blocks > kBlockWall) {
      wanted.push_back(kBlockWall);
      if (n >= 4) wanted.push_back(kBlockWall);
    }
    if (params_.blocks > kBlockLava) wanted.push_back(kBlockLava);
    if (params_.blocks > kBlockTree) wanted.push_back(kBlockTree);

    for (std::uint64_t attempt = 0;; ++attempt) {
      std::mt19937_64 rng(derive_seed(params_.layout_seed, attempt));
      layout_.assign(n * n, kBlockFloor);
      layout_[n * n - 1] = kBlockGoal;
      // candidate cells: everything but the goal and cell 0; always leave at
      // least one plain floor tile for the agent
      std::vector<std::size_t> candidates;
      for (std::size_t i = 1; i + 1 < n * n; ++i) candidates.push_back(i);
      for (std::size_t i = candidates.size(); i-- > 1;) {
        const std::size_t j =
            static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
        std::swap(candidates[i], candidates[std::min(j, i)]);
      }
      const std::size_t n_place =
          std::min(wanted.size(), candidates.size() > 1 ? candidates.size() - 1 : 0);
      for (std::size_t k = 0; k < n_place; ++k) layout_[candidates[k]] = wanted[k];
      if (goal_reachable_from_all_floor()) break;
    }
    floor_tiles_.clear();
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      if (layout_[i] != kBlockWall && layout_[i] != kBlockGoal) floor_tiles_.push_back(i);
    }
  }

  bool goal_reachable_from_all_floor() const {
    const std::size_t n = params_.n;
    std::vector<bool> seen(n * n, false);
    std::deque<std::size_t> queue{n * n - 1};
    seen[n * n - 1] = true;
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const long r = static_cast<long>(i / n), c = static_cast<long>(i % n);
      const long moves[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
      for (const auto& m : moves) {
        const long nr = r + m[0], nc = c + m[1];
        if (nr < 0 || nc < 0 || nr >= static_cast<long>(n) || nc >= static_cast<long>(n))
          continue;
        const std::size_t j = static_cast<std::size_t>(nr) * n + static_cast<std::size_t>(nc);
        if (!seen[j] && layout_[j] != kBlockWall) {
          seen[j] = true;
          queue.push_back(j);
        }
      }
    }
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      if (layout_[i] != kBlockWall && !seen[i]) return false;
    }
    return true;
  }

  GridWorldParams params_;
  EnvSpec spec_;
  std::vector<std::size_t> layout_;
  std::vector<std::size_t> floor_tiles_;
};

}  // namespace

std::unique_ptr<Environment> make_point_mass(const PointMassParams& p) {
  return std::make_unique<PointMassEnv>(p);
}

std::unique_ptr<Environment> make_pendulum(const PendulumParams& p) {
  return std::make_unique<PendulumEnv>(p);
}

std::unique_ptr<Environment> make_gridworld(const GridWorldParams& p) {
  return std::make_unique<GridWorldEnv>(p);
}

std::unique_ptr<Environment> make_env(const std::string& name) {
  if (name == "point_mass") return make_point_mass();
  if (name == "pendulum") return make_pendulum();
  if (name == "gridworld") return make_gridworld();
  throw std::invalid_argument("unknown environment: " + name);
}

Action scripted_action(const Environment& env, std::span<const double> state) {
  const std::string& name = env.spec().name;
  if (name == "point_mass") {
    const double kp = 4.0, kd = 4.0;
    std::vector<double> a{-kp * state[0] - kd * state[2], -kp * state[1] - kd * state[3]};
    for (double& v : a) v = std::clamp(v, -1.0, 1.0);
    return a;
  }
  if (name == "pendulum") {
    const double th = PendulumEnv::normalize_angle(state[0]);
    const double om = state[1];
    // rod about the pivot: I = ml^2/3, gravity torque (mgl/2) sin(theta),
    // upright rest energy E_d = mgl/2 with g=10, m=l=1
    const double inertia = 1.0 / 3.0;
    const double e_top = 5.0;
    const double energy = 0.5 * inertia * om * om + 5.0 * std::cos(th);
    double u;
    if (std::cos(th) > 0.95 && std::fabs(om) < 2.5) {
      u = -12.0 * th - 2.5 * om;  // stabilize near upright
    } else if (std::fabs(om) < 1e-3) {
      u = 2.0;  // kick out of rest
    } else {
      // energy pumping: dE/dt = u * omega
      u = 2.0 * (e_top - energy) * (om >= 0 ? 1.0 : -1.0);
    }
    return std::vector<double>{std::clamp(u, -2.0, 2.0)};
  }
  if (name == "gridworld") {
    const auto& grid = static_cast<const GridWorldEnv&>(env);
    const long n = static_cast<long>(grid.n());
    const long r = static_cast<long>(state[0]), c = static_cast<long>(state[1]);
    const long gr = n - 1, gc = n - 1;
    const long moves[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
    std::size_t best = 4;
    long best_dist = std::labs(r - gr) + std::labs(c - gc);
    for (std::size_t a = 0; a < 4; ++a) {
      const long nr = r + moves[a][0], nc = c + moves[a][1];
      if (nr < 0 || nc < 0 || nr >= n || nc >= n) continue;
      if (grid.layout()[static_cast<std::size_t>(nr) * grid.n() +
                        static_cast<std::size_t>(nc)] == kBlockWall)
        continue;
      const long d = std::labs(nr - gr) + std::labs(nc - gc);
      if (d < best_dist) {
        best_dist = d;
        best = a;
      }
    }
    return best;
  }
  throw std::invalid_argument("no scripted controller for env: " + name);
}

namespace {
ReturnStats rollout_returns(const Environment& env, std::size_t episodes,
                            std::mt19937_64& rng,
                            const std::function<Action(std::span<const double>)>& pick) {
  ReturnStats stats;
  stats.episodes = episodes;
  std::vector<double> returns;
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> s = env.reset(rng);
    double total = 0.0;
    for (;;) {
      Transition tr = env.step(s, pick(s));
      total += tr.reward;
      if (tr.done) break;
      s = tr.next_state;
    }
    returns.push_back(total);
  }
  double acc = 0.0;
  for (double r : returns) acc += r;
  stats.mean = acc / static_cast<double>(returns.size());
  double var = 0.0;
  for (double r : returns) var += (r - stats.mean) * (r - stats.mean);
  stats.stddev = returns.size() > 1
                     ? std::sqrt(var / static_cast<double>(returns.size() - 1))
                     : 0.0;
  return stats;
}
}  // namespace

ReturnStats scripted_policy_return(const Environment& env, std::size_t episodes,
                                   std::mt19937_64& rng) {
  return rollout_returns(env, episodes, rng, [&env](std::span<const double> s) {
    return scripted_action(env, s);
  });
}

ReturnStats random_policy_return(const Environment& env, std::size_t episodes,
                                 std::mt19937_64& rng) {
  const EnvSpec& spec = env.spec();
  return rollout_returns(env, episodes, rng, [&spec, &rng](std::span<const double>) {
    if (spec.discrete_actions) {
      return Action{static_cast<std::size_t>(
          uniform01(rng) * static_cast<double>(spec.action_dim))};
    }
    std::vector<double> a(spec.action_dim);
    for (double& v : a) v = uniform_range(rng, spec.action_low, spec.action_high);
    return Action{std::move(a)};
  });
}

}  // namespace prunecert
