#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace prunecert {

/// Continuous actions are vectors, discrete actions indices.
using Action = std::variant<std::vector<double>, std::size_t>;

struct EnvSpec {
  std::string name;
  std::size_t state_dim = 0;
  std::size_t obs_dim = 0;
  bool discrete_actions = false;
  std::size_t action_dim = 0;     // continuous dims or K
  double action_low = -1.0;
  double action_high = 1.0;
  std::size_t horizon = 200;
  double r_max = 1.0;
  std::uint64_t seed = 0;
  // one-hot tiled observations (gridworld): obs_dim = tile_count * tile_blocks
  std::size_t tile_count = 0;
  std::size_t tile_blocks = 0;
};

struct Transition {
  std::vector<double> state;
  Action action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;       // episode boundary (terminal or truncated)
  bool truncated = false;  // horizon cut rather than a true terminal state
};

/// Environments hold parameters only; dynamics are pure functions of
/// (state, action). Stochasticity lives in reset. States carry the step
/// counter in their last component so horizon termination stays pure.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset(std::mt19937_64& rng) const = 0;
  virtual Transition step(std::span<const double> state, const Action& action) const = 0;
  virtual std::vector<double> observe(std::span<const double> state) const = 0;
};

struct PointMassParams {
  double dt = 0.05;
  double r_max = 10.0;
  std::size_t horizon = 200;
  double start_box = 1.0;
  double action_cost = 0.01;
};

struct PendulumParams {
  double dt = 0.05;
  double g = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double max_speed = 8.0;
  double max_torque = 2.0;
  double r_max = 10.0;
  std::size_t horizon = 200;
};

struct GridWorldParams {
  std::size_t n = 5;       // n x n tiles
  std::size_t blocks = 6;  // floor, goal, agent-marker, wall, lava, tree
  std::size_t horizon = 50;
  double step_penalty = 0.01;
  std::uint64_t layout_seed = 7;
};

// Gridworld block ids in observation one-hots. The first three are always
// present; wall/lava/tree only appear when `blocks` covers their id.
inline constexpr std::size_t kBlockFloor = 0;
inline constexpr std::size_t kBlockGoal = 1;
inline constexpr std::size_t kBlockAgent = 2;
inline constexpr std::size_t kBlockWall = 3;
inline constexpr std::size_t kBlockLava = 4;
inline constexpr std::size_t kBlockTree = 5;

std::unique_ptr<Environment> make_point_mass(const PointMassParams& p = {});
std::unique_ptr<Environment> make_pendulum(const PendulumParams& p = {});
std::unique_ptr<Environment> make_gridworld(const GridWorldParams& p = {});

/// Factory by name: "point_mass", "pendulum", "gridworld".
std::unique_ptr<Environment> make_env(const std::string& name);

/// Deterministic reference controllers used as oracles: a PD controller for
/// the point mass, an energy/PD law for the pendulum, greedy goal-seeking for
/// the grid.
Action scripted_action(const Environment& env, std::span<const double> state);

struct ReturnStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t episodes = 0;
};

/// Mean undiscounted return of the scripted controller / uniform-random play.
ReturnStats scripted_policy_return(const Environment& env, std::size_t episodes,
                                   std::mt19937_64& rng);
ReturnStats random_policy_return(const Environment& env, std::size_t episodes,
                                 std::mt19937_64& rng);

}  // namespace prunecert
