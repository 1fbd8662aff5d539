#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "prunecert/csv.hpp"
#include "prunecert/harness.hpp"
#include "prunecert/numcheck.hpp"

namespace {

prunecert::RunConfig load_config_or_default(const std::string& path,
                                            long long seed_override) {
  prunecert::RunConfig cfg;
  if (!path.empty()) cfg = prunecert::load_run_config(path);
  if (seed_override >= 0) {
    cfg.ppo.seed = static_cast<std::uint64_t>(seed_override);
    cfg.prune.rng_seed = static_cast<std::uint64_t>(seed_override);
  }
  return cfg;
}

std::size_t workers_from_env(std::size_t cli_value) {
  if (cli_value > 0) return cli_value;
  if (const char* env = std::getenv("PRUNECERT_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified-robustness workbench for pruned stochastic policies"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", weights, pruned_weights, results_path,
              criterion = "magnitude";
  long long seed = -1;
  double sparsity = 0.5;
  bool self_check = false, published_c = false;
  std::size_t workers = 0;

  CLI::App* train = app.add_subcommand("train", "Train a policy per the config");
  train->add_option("--config", config_path, "run config (json)");
  train->add_option("--seed", seed, "seed override");
  train->add_option("--out", out_dir, "output directory");

  CLI::App* certify = app.add_subcommand("certify", "Certify a weight file");
  certify->add_option("--config", config_path, "run config (json)");
  certify->add_option("--weights", weights, "policy weight file");
  certify->add_option("--pruned-weights", pruned_weights,
                      "pruned policy weight file (three-term decomposition)");
  certify->add_option("--seed", seed, "seed override");
  certify->add_option("--out", out_dir, "output directory");
  certify->add_flag("--self-check", self_check, "run the oracle suite");
  certify->add_flag("--published-c", published_c, "use the published categorical constant 1/4");

  CLI::App* prune = app.add_subcommand("prune", "One-shot prune of a weight file");
  prune->add_option("--config", config_path, "run config (json)");
  prune->add_option("--weights", weights, "policy weight file")->required();
  prune->add_option("--sparsity", sparsity, "target sparsity");
  prune->add_option("--criterion", criterion, "magnitude|magnitude_ste|random|saliency");
  prune->add_option("--seed", seed, "seed override");
  prune->add_option("--out", out_dir, "output directory");

  CLI::App* attack = app.add_subcommand("attack", "Evaluate attacks on a weight file");
  attack->add_option("--config", config_path, "run config (json)");
  attack->add_option("--weights", weights, "victim weight file")->required();
  attack->add_option("--seed", seed, "seed override");
  attack->add_option("--out", out_dir, "output directory");

  CLI::App* sweep = app.add_subcommand("sweep", "Run the experiment grid");
  sweep->add_option("--config", config_path, "run config (json)");
  sweep->add_option("--seed", seed, "seed override");
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--workers", workers, "worker threads (or PRUNECERT_WORKERS)");

  CLI::App* report = app.add_subcommand("report", "Recompute reports from results.csv");
  report->add_option("--config", config_path, "run config (json)");
  report->add_option("--results", results_path, "existing results.csv")->required();
  report->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      prunecert::run_train(load_config_or_default(config_path, seed), out_dir);
    } else if (certify->parsed()) {
      prunecert::RunConfig cfg = load_config_or_default(config_path, seed);
      if (self_check) {
        bool all = true;
        for (const auto& line : prunecert::numcheck::self_check()) {
          std::cout << (line.passed ? "[PASS] " : "[FAIL] ") << line.name << " got "
                    << prunecert::format_double(line.got) << " expected "
                    << prunecert::format_double(line.expected) << "\n";
          all = all && line.passed;
        }
        if (weights.empty()) return all ? 0 : 1;
      } else if (weights.empty()) {
        throw std::runtime_error("certify: --weights required");
      }
      prunecert::run_certify(cfg, weights, pruned_weights, out_dir, self_check, published_c);
    } else if (prune->parsed()) {
      prunecert::run_prune_once(load_config_or_default(config_path, seed), weights,
                                sparsity, criterion, out_dir);
    } else if (attack->parsed()) {
      prunecert::run_attack_eval(load_config_or_default(config_path, seed), weights,
                                 out_dir);
    } else if (sweep->parsed()) {
      prunecert::run_sweep(load_config_or_default(config_path, seed), out_dir,
                           workers_from_env(workers));
      prunecert::write_report(prunecert::load_results_csv(out_dir + "/results.csv"),
                              load_config_or_default(config_path, seed), out_dir);
    } else if (report->parsed()) {
      prunecert::write_report(prunecert::load_results_csv(results_path),
                              load_config_or_default(config_path, seed), out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
