#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunecert/attack.hpp"
#include "prunecert/cert.hpp"
#include "prunecert/envs.hpp"
#include "prunecert/prune.hpp"
#include "prunecert/rl.hpp"

namespace prunecert {

struct AttackConfig {
  std::vector<std::string> families{"random", "mad"};
  AttackSpec base;
  std::size_t episodes = 100;
  std::string adversary_weights;  // learned attack
};

struct CertConfig {
  MdpConstants constants;
  double beta_smoothness = 0.0;
  std::size_t num_states = 16;
  std::size_t quadrature_points = 8;
  double clean_regret = 0.0;
  bool published_c = false;
};

struct SweepConfig {
  std::vector<std::string> criteria{"magnitude"};
  std::vector<double> sparsities{0.0, 0.3, 0.5, 0.7, 0.8, 0.9};
  std::vector<double> kappas{0.0};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  std::size_t eval_episodes = 100;
  std::vector<std::string> attacks{"random", "mad"};
};

struct RunConfig {
  nlohmann::json env;  // section passed to the environment factory
  PpoConfig ppo;
  PruneConfig prune;
  AttackConfig attack;
  CertConfig cert;
  SweepConfig sweep;
};

std::unique_ptr<Environment> make_env_from_config(const nlohmann::json& env_section);

/// Parse with full defaults; unknown keys are rejected so typos fail loudly.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

/// Every field explicit; a sweep is reproducible from this plus the seeds.
nlohmann::json resolved_config_json(const RunConfig& cfg);

struct Aggregate {
  double mean = 0.0;
  std::optional<double> sem;   // absent with a single value
  std::optional<double> ci95;  // 1.96 * sem
};

Aggregate aggregate(std::span<const double> values);
double worst_seed(std::span<const double> values);

/// value / baseline_mean; a zero baseline is an error, not infinity.
double normalize(double value, double baseline_mean);

struct SweetPoint {
  double sparsity = 0.0;
  double norm_clean = 0.0;
  double norm_robust = 0.0;
};

/// argmax of (norm_clean + norm_robust)/2, ties toward lower sparsity.
double sweet_spot(std::span<const SweetPoint> curve);

struct SweepRow {
  std::string env;
  std::string method;
  double sparsity = 0.0;
  double kappa = 0.0;
  std::string attack;
  std::uint64_t seed = 0;
  double clean_return = 0.0;
  double robust_return = 0.0;
  double lipschitz = 0.0;
  double global_bound = 0.0;
  double f_hat = 0.0;
};

std::vector<std::string> sweep_csv_header();
std::vector<std::string> sweep_csv_row(const SweepRow& row);

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> failures;  // cell keys that errored
};

/// Executes the (criterion x sparsity x kappa x seed) grid. Completed cells
/// are skipped via on-disk markers under <out_dir>/cells; failures are
/// recorded and the sweep continues. Worker threads run whole cells; output
/// content is independent of the worker count.
SweepResult run_sweep(const RunConfig& cfg, const std::string& out_dir,
                      std::size_t workers = 1);

/// Emits results.csv, frontier.csv, sweetspots.csv, worstseed.csv, cert.csv.
void write_report(const SweepResult& result, const RunConfig& cfg,
                  const std::string& out_dir);

/// Rebuild a SweepResult from a previously written results.csv.
SweepResult load_results_csv(const std::string& path);

// Single-run entry points behind the CLI subcommands.
void run_train(const RunConfig& cfg, const std::string& out_dir);
void run_certify(const RunConfig& cfg, const std::string& weights_path,
                 const std::string& pruned_weights_path, const std::string& out_dir,
                 bool self_check, bool published_c);
void run_attack_eval(const RunConfig& cfg, const std::string& weights_path,
                     const std::string& out_dir);
void run_prune_once(const RunConfig& cfg, const std::string& weights_path,
                    double sparsity, const std::string& criterion,
                    const std::string& out_dir);

/// States sampled by rolling the policy in the env (observations from the
/// policy's own visitation).
std::vector<std::vector<double>> sample_policy_states(const Environment& env,
                                                      const PolicyNetwork& net,
                                                      std::size_t count,
                                                      std::mt19937_64& rng);

}  // namespace prunecert
