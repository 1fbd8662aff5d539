#include "prunecert/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "prunecert/csv.hpp"
#include "prunecert/numcheck.hpp"
#include "prunecert/rng.hpp"
#include "prunecert/weights_io.hpp"

namespace prunecert {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " +
                                  section);
    }
  }
}

NormP norm_from_string(const std::string& s) {
  if (s == "l2" || s == "2") return NormP::kL2;
  if (s == "linf" || s == "inf") return NormP::kLinf;
  throw std::invalid_argument("config: unknown norm: " + s);
}

std::string norm_to_string(NormP p) { return p == NormP::kL2 ? "l2" : "linf"; }

}  // namespace

std::unique_ptr<Environment> make_env_from_config(const json& env_section) {
  const std::string name = env_section.value("name", "point_mass");
  if (name == "point_mass") {
    check_keys(env_section,
               {"name", "dt", "r_max", "horizon", "start_box", "action_cost"}, "env");
    PointMassParams p;
    p.dt = env_section.value("dt", p.dt);
    p.r_max = env_section.value("r_max", p.r_max);
    p.horizon = env_section.value("horizon", p.horizon);
    p.start_box = env_section.value("start_box", p.start_box);
    p.action_cost = env_section.value("action_cost", p.action_cost);
    return make_point_mass(p);
  }
  if (name == "pendulum") {
    check_keys(env_section, {"name", "dt", "r_max", "horizon"}, "env");
    PendulumParams p;
    p.dt = env_section.value("dt", p.dt);
    p.r_max = env_section.value("r_max", p.r_max);
    p.horizon = env_section.value("horizon", p.horizon);
    return make_pendulum(p);
  }
  if (name == "gridworld") {
    check_keys(env_section, {"name", "n", "horizon", "step_penalty", "layout_seed"},
               "env");
    GridWorldParams p;
    p.n = env_section.value("n", p.n);
    p.horizon = env_section.value("horizon", p.horizon);
    p.step_penalty = env_section.value("step_penalty", p.step_penalty);
    p.layout_seed = env_section.value("layout_seed", p.layout_seed);
    return make_gridworld(p);
  }
  throw std::invalid_argument("config: unknown env name: " + name);
}

RunConfig parse_run_config(const json& doc) {
  check_keys(doc, {"env", "ppo", "prune", "attack", "cert", "sweep"}, "top level");
  RunConfig cfg;
  cfg.env = doc.value("env", json::object());
  if (!cfg.env.contains("name")) cfg.env["name"] = "point_mass";

  if (doc.contains("ppo")) {
    const json& p = doc["ppo"];
    check_keys(p,
               {"total_steps", "learning_rate", "num_envs", "rollout_len",
                "update_epochs", "minibatches", "gamma", "gae_lambda", "clip_epsilon",
                "entropy_coef", "value_coef", "max_grad_norm", "kappa",
                "sa_inner_steps", "sa_step_size", "epsilon", "seed", "hidden_sizes",
                "activation", "sigma", "checkpoint_interval"},
               "ppo");
    PpoConfig& c = cfg.ppo;
    c.total_steps = p.value("total_steps", c.total_steps);
    c.learning_rate = p.value("learning_rate", c.learning_rate);
    c.num_envs = p.value("num_envs", c.num_envs);
    c.rollout_len = p.value("rollout_len", c.rollout_len);
    c.update_epochs = p.value("update_epochs", c.update_epochs);
    c.minibatches = p.value("minibatches", c.minibatches);
    c.gamma = p.value("gamma", c.gamma);
    c.gae_lambda = p.value("gae_lambda", c.gae_lambda);
    c.clip_epsilon = p.value("clip_epsilon", c.clip_epsilon);
    c.entropy_coef = p.value("entropy_coef", c.entropy_coef);
    c.value_coef = p.value("value_coef", c.value_coef);
    c.max_grad_norm = p.value("max_grad_norm", c.max_grad_norm);
    c.kappa = p.value("kappa", c.kappa);
    c.sa_inner_steps = p.value("sa_inner_steps", c.sa_inner_steps);
    c.sa_step_size = p.value("sa_step_size", c.sa_step_size);
    c.epsilon = p.value("epsilon", c.epsilon);
    c.seed = p.value("seed", c.seed);
    if (p.contains("hidden_sizes")) {
      c.hidden_sizes = p["hidden_sizes"].get<std::vector<std::size_t>>();
    }
    c.activation = activation_from_name(p.value("activation", std::string("tanh")));
    c.sigma = p.value("sigma", c.sigma);
    c.checkpoint_interval = p.value("checkpoint_interval", c.checkpoint_interval);
  }

  if (doc.contains("prune")) {
    const json& p = doc["prune"];
    check_keys(p,
               {"criterion", "target_sparsity", "schedule", "burn_in_fraction",
                "update_interval", "erk_enabled", "prune_critic", "seed"},
               "prune");
    PruneConfig& c = cfg.prune;
    c.criterion = criterion_from_name(p.value("criterion", std::string("none")));
    c.target_sparsity = p.value("target_sparsity", c.target_sparsity);
    c.schedule = schedule_from_name(p.value("schedule", std::string("linear")));
    c.burn_in_fraction = p.value("burn_in_fraction", c.burn_in_fraction);
    c.update_interval = p.value("update_interval", c.update_interval);
    c.erk_enabled = p.value("erk_enabled", c.erk_enabled);
    c.prune_critic = p.value("prune_critic", c.prune_critic);
    c.rng_seed = p.value("seed", c.rng_seed);
  }

  if (doc.contains("attack")) {
    const json& a = doc["attack"];
    check_keys(a,
               {"families", "epsilon", "norm_p", "pgd_steps", "pgd_step_size",
                "jitter_scale", "episodes", "q_hidden", "td_epochs",
                "robust_perturb_scale", "buffer_transitions", "attack_rate",
                "lambda_stealth", "adversary_weights"},
               "attack");
    AttackConfig& c = cfg.attack;
    if (a.contains("families")) {
      c.families = a["families"].get<std::vector<std::string>>();
    }
    c.base.epsilon = a.value("epsilon", c.base.epsilon);
    c.base.norm_p = norm_from_string(a.value("norm_p", std::string("linf")));
    c.base.pgd_steps = a.value("pgd_steps", c.base.pgd_steps);
    c.base.pgd_step_size = a.value("pgd_step_size", c.base.pgd_step_size);
    c.base.jitter_scale = a.value("jitter_scale", c.base.jitter_scale);
    c.episodes = a.value("episodes", c.episodes);
    c.base.rs.q_hidden = a.value("q_hidden", c.base.rs.q_hidden);
    c.base.rs.td_epochs = a.value("td_epochs", c.base.rs.td_epochs);
    c.base.rs.robust_perturb_scale =
        a.value("robust_perturb_scale", c.base.rs.robust_perturb_scale);
    c.base.rs.buffer_transitions =
        a.value("buffer_transitions", c.base.rs.buffer_transitions);
    c.base.attack_rate = a.value("attack_rate", c.base.attack_rate);
    c.base.lambda_stealth = a.value("lambda_stealth", c.base.lambda_stealth);
    c.adversary_weights = a.value("adversary_weights", c.adversary_weights);
  }

  if (doc.contains("cert")) {
    const json& c = doc["cert"];
    check_keys(c,
               {"gamma", "r_max", "epsilon", "norm_p", "beta_smoothness",
                "num_states", "quadrature_points", "clean_regret", "published_c"},
               "cert");
    CertConfig& cc = cfg.cert;
    cc.constants.gamma = c.value("gamma", cc.constants.gamma);
    cc.constants.r_max = c.value("r_max", cc.constants.r_max);
    cc.constants.epsilon = c.value("epsilon", cc.constants.epsilon);
    cc.constants.norm_p = norm_from_string(c.value("norm_p", std::string("linf")));
    cc.beta_smoothness = c.value("beta_smoothness", cc.beta_smoothness);
    cc.num_states = c.value("num_states", cc.num_states);
    cc.quadrature_points = c.value("quadrature_points", cc.quadrature_points);
    cc.clean_regret = c.value("clean_regret", cc.clean_regret);
    cc.published_c = c.value("published_c", cc.published_c);
  }

  if (doc.contains("sweep")) {
    const json& s = doc["sweep"];
    check_keys(s, {"criteria", "sparsities", "kappas", "seeds", "eval_episodes",
                   "attacks"},
               "sweep");
    SweepConfig& sc = cfg.sweep;
    if (s.contains("criteria")) sc.criteria = s["criteria"].get<std::vector<std::string>>();
    if (s.contains("sparsities")) sc.sparsities = s["sparsities"].get<std::vector<double>>();
    if (s.contains("kappas")) sc.kappas = s["kappas"].get<std::vector<double>>();
    if (s.contains("seeds")) sc.seeds = s["seeds"].get<std::vector<std::uint64_t>>();
    sc.eval_episodes = s.value("eval_episodes", sc.eval_episodes);
    if (s.contains("attacks")) sc.attacks = s["attacks"].get<std::vector<std::string>>();
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(json::parse(read_text_file(path)));
}

json resolved_config_json(const RunConfig& cfg) {
  json doc;
  doc["env"] = cfg.env;
  json& p = doc["ppo"];
  p["total_steps"] = cfg.ppo.total_steps;
  p["learning_rate"] = cfg.ppo.learning_rate;
  p["num_envs"] = cfg.ppo.num_envs;
  p["rollout_len"] = cfg.ppo.rollout_len;
  p["update_epochs"] = cfg.ppo.update_epochs;
  p["minibatches"] = cfg.ppo.minibatches;
  p["gamma"] = cfg.ppo.gamma;
  p["gae_lambda"] = cfg.ppo.gae_lambda;
  p["clip_epsilon"] = cfg.ppo.clip_epsilon;
  p["entropy_coef"] = cfg.ppo.entropy_coef;
  p["value_coef"] = cfg.ppo.value_coef;
  p["max_grad_norm"] = cfg.ppo.max_grad_norm;
  p["kappa"] = cfg.ppo.kappa;
  p["sa_inner_steps"] = cfg.ppo.sa_inner_steps;
  p["sa_step_size"] = cfg.ppo.sa_step_size;
  p["epsilon"] = cfg.ppo.epsilon;
  p["seed"] = cfg.ppo.seed;
  p["hidden_sizes"] = cfg.ppo.hidden_sizes;
  p["activation"] = activation_name(cfg.ppo.activation);
  p["sigma"] = cfg.ppo.sigma;
  p["checkpoint_interval"] = cfg.ppo.checkpoint_interval;
  json& pr = doc["prune"];
  pr["criterion"] = criterion_name(cfg.prune.criterion);
  pr["target_sparsity"] = cfg.prune.target_sparsity;
  pr["schedule"] = schedule_name(cfg.prune.schedule);
  pr["burn_in_fraction"] = cfg.prune.burn_in_fraction;
  pr["update_interval"] = cfg.prune.update_interval;
  pr["erk_enabled"] = cfg.prune.erk_enabled;
  pr["prune_critic"] = cfg.prune.prune_critic;
  pr["seed"] = cfg.prune.rng_seed;
  json& a = doc["attack"];
  a["families"] = cfg.attack.families;
  a["epsilon"] = cfg.attack.base.epsilon;
  a["norm_p"] = norm_to_string(cfg.attack.base.norm_p);
  a["pgd_steps"] = cfg.attack.base.pgd_steps;
  a["pgd_step_size"] = cfg.attack.base.pgd_step_size;
  a["jitter_scale"] = cfg.attack.base.jitter_scale;
  a["episodes"] = cfg.attack.episodes;
  a["q_hidden"] = cfg.attack.base.rs.q_hidden;
  a["td_epochs"] = cfg.attack.base.rs.td_epochs;
  a["robust_perturb_scale"] = cfg.attack.base.rs.robust_perturb_scale;
  a["buffer_transitions"] = cfg.attack.base.rs.buffer_transitions;
  a["attack_rate"] = cfg.attack.base.attack_rate;
  a["lambda_stealth"] = cfg.attack.base.lambda_stealth;
  a["adversary_weights"] = cfg.attack.adversary_weights;
  json& c = doc["cert"];
  c["gamma"] = cfg.cert.constants.gamma;
  c["r_max"] = cfg.cert.constants.r_max;
  c["epsilon"] = cfg.cert.constants.epsilon;
  c["norm_p"] = norm_to_string(cfg.cert.constants.norm_p);
  c["beta_smoothness"] = cfg.cert.beta_smoothness;
  c["num_states"] = cfg.cert.num_states;
  c["quadrature_points"] = cfg.cert.quadrature_points;
  c["clean_regret"] = cfg.cert.clean_regret;
  c["published_c"] = cfg.cert.published_c;
  json& s = doc["sweep"];
  s["criteria"] = cfg.sweep.criteria;
  s["sparsities"] = cfg.sweep.sparsities;
  s["kappas"] = cfg.sweep.kappas;
  s["seeds"] = cfg.sweep.seeds;
  s["eval_episodes"] = cfg.sweep.eval_episodes;
  s["attacks"] = cfg.sweep.attacks;
  return doc;
}

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("aggregate: no values");
  Aggregate out;
  double acc = 0.0;
  for (double v : values) acc += v;
  out.mean = acc / static_cast<double>(values.size());
  if (values.size() > 1) {
    double var = 0.0;
    for (double v : values) var += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(var / static_cast<double>(values.size() - 1));
    out.sem = sd / std::sqrt(static_cast<double>(values.size()));
    out.ci95 = 1.96 * *out.sem;
  }
  return out;
}

double worst_seed(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("worst_seed: no values");
  double m = values[0];
  for (double v : values) m = std::min(m, v);
  return m;
}

double normalize(double value, double baseline_mean) {
  if (baseline_mean == 0.0) {
    throw std::invalid_argument("normalize: zero baseline mean");
  }
  return value / baseline_mean;
}

double sweet_spot(std::span<const SweetPoint> curve) {
  if (curve.empty()) throw std::invalid_argument("sweet_spot: empty curve");
  std::vector<SweetPoint> sorted(curve.begin(), curve.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const SweetPoint& a, const SweetPoint& b) { return a.sparsity < b.sparsity; });
  double best_sparsity = sorted[0].sparsity;
  double best_score = (sorted[0].norm_clean + sorted[0].norm_robust) / 2.0;
  for (const SweetPoint& pt : sorted) {
    const double score = (pt.norm_clean + pt.norm_robust) / 2.0;
    if (score > best_score) {
      best_score = score;
      best_sparsity = pt.sparsity;
    }
  }
  return best_sparsity;
}

std::vector<std::string> sweep_csv_header() {
  return {"env", "method", "sparsity", "kappa", "attack", "seed",
          "clean_return", "robust_return", "lipschitz", "global_bound", "f_hat"};
}

std::vector<std::string> sweep_csv_row(const SweepRow& row) {
  return {row.env,
          row.method,
          format_double(row.sparsity),
          format_double(row.kappa),
          row.attack,
          std::to_string(row.seed),
          format_double(row.clean_return),
          format_double(row.robust_return),
          format_double(row.lipschitz),
          format_double(row.global_bound),
          format_double(row.f_hat)};
}

std::vector<std::vector<double>> sample_policy_states(const Environment& env,
                                                      const PolicyNetwork& net,
                                                      std::size_t count,
                                                      std::mt19937_64& rng) {
  std::vector<std::vector<double>> states;
  states.reserve(count);
  while (states.size() < count) {
    std::vector<double> s = env.reset(rng);
    for (;;) {
      const std::vector<double> obs = env.observe(s);
      states.push_back(obs);
      if (states.size() >= count) break;
      const ForwardResult fwd = forward(net, obs);
      Action a;
      if (env.spec().discrete_actions) a = sample_categorical(fwd.dist, rng);
      else a = sample_gaussian(fwd.dist, rng);
      Transition tr = env.step(s, a);
      if (tr.done) break;
      s = tr.next_state;
    }
  }
  return states;
}

namespace {

struct Cell {
  std::string method;
  double sparsity = 0.0;
  double kappa = 0.0;
  std::uint64_t seed = 0;
};

std::string sanitize_number(double v) {
  std::string s = format_double(v);
  for (char& c : s) {
    if (c == '.') c = 'p';
    if (c == '-') c = 'm';
  }
  return s;
}

std::string cell_key(const Cell& c) {
  return c.method + "_s" + sanitize_number(c.sparsity) + "_k" +
         sanitize_number(c.kappa) + "_seed" + std::to_string(c.seed);
}

std::string baseline_method() { return "none"; }

double baseline_kappa(double kappa) { return kappa; }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<SweepRow> parse_rows_csv(const std::string& text) {
  std::vector<SweepRow> rows;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != sweep_csv_header().size()) {
      throw std::runtime_error("results csv: malformed row: " + line);
    }
    SweepRow r;
    r.env = f[0];
    r.method = f[1];
    r.sparsity = std::strtod(f[2].c_str(), nullptr);
    r.kappa = std::strtod(f[3].c_str(), nullptr);
    r.attack = f[4];
    r.seed = std::strtoull(f[5].c_str(), nullptr, 10);
    r.clean_return = std::strtod(f[6].c_str(), nullptr);
    r.robust_return = std::strtod(f[7].c_str(), nullptr);
    r.lipschitz = std::strtod(f[8].c_str(), nullptr);
    r.global_bound = std::strtod(f[9].c_str(), nullptr);
    r.f_hat = std::strtod(f[10].c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

struct CellOutput {
  std::vector<SweepRow> rows;
  std::vector<std::string> cert_row;  // CertReport::csv_row with key prefix
};

CellOutput execute_cell(const RunConfig& cfg, const Cell& cell,
                        const std::string& cells_dir) {
  const std::string key = cell_key(cell);
  const fs::path cell_dir = fs::path(cells_dir) / key;
  const fs::path done_marker = cell_dir / "done";
  const fs::path rows_path = cell_dir / "rows.csv";
  const fs::path cert_path = cell_dir / "cert_row.csv";

  CellOutput out;
  if (fs::exists(done_marker) && fs::exists(rows_path)) {
    out.rows = parse_rows_csv(read_text_file(rows_path.string()));
    if (fs::exists(cert_path)) {
      std::istringstream in(read_text_file(cert_path.string()));
      std::string header, row;
      std::getline(in, header);
      std::getline(in, row);
      out.cert_row = split_csv_line(row);
    }
    return out;
  }
  fs::create_directories(cell_dir);

  std::unique_ptr<Environment> env = make_env_from_config(cfg.env);

  PpoConfig ppo = cfg.ppo;
  ppo.seed = cell.seed;
  ppo.kappa = cell.kappa;
  PruneConfig prune = cfg.prune;
  prune.criterion = criterion_from_name(cell.method);
  prune.target_sparsity = cell.sparsity;
  prune.rng_seed = cell.seed;

  TrainResult trained = train_ppo(*env, ppo, prune,
                                  /*adversary=*/nullptr,
                                  (cell_dir / "metrics.csv").string());
  save_policy((cell_dir / "weights.json").string(), trained.net);

  const double lipschitz = surrogate_lipschitz(trained.net);
  const double bound = global_bound(trained.net, cfg.cert.constants, cfg.cert.published_c);

  std::mt19937_64 clean_rng(derive_seed(cell.seed, 500));
  const EvalResult clean =
      evaluate(trained.net, *env, nullptr, cfg.sweep.eval_episodes, clean_rng);

  const std::string env_name = env->spec().name;
  SweepRow base_row;
  base_row.env = env_name;
  base_row.method = cell.method;
  base_row.sparsity = cell.sparsity;
  base_row.kappa = cell.kappa;
  base_row.seed = cell.seed;
  base_row.clean_return = clean.mean;
  base_row.lipschitz = lipschitz;
  base_row.global_bound = bound;

  {
    SweepRow r = base_row;
    r.attack = "clean";
    r.robust_return = clean.mean;
    r.f_hat = 0.0;
    out.rows.push_back(r);
  }
  for (std::size_t i = 0; i < cfg.sweep.attacks.size(); ++i) {
    AttackSpec spec = cfg.attack.base;
    spec.family = attack_from_name(cfg.sweep.attacks[i]);
    if (spec.family == AttackFamily::kLearned) {
      if (cfg.attack.adversary_weights.empty()) {
        throw std::runtime_error(
            "sweep: learned attack requires attack.adversary_weights");
      }
      spec.adversary = std::make_shared<AdversaryNet>(
          load_adversary(cfg.attack.adversary_weights));
    }
    std::mt19937_64 setup_rng(derive_seed(cell.seed, 600 + i));
    std::unique_ptr<StateAttack> attack =
        make_attack(spec, trained.net, *env, cfg.ppo.gamma, setup_rng);
    std::mt19937_64 eval_rng(derive_seed(cell.seed, 700 + i));
    const EvalResult res =
        evaluate(trained.net, *env, attack.get(), cfg.sweep.eval_episodes, eval_rng);
    SweepRow r = base_row;
    r.attack = cfg.sweep.attacks[i];
    r.robust_return = res.mean;
    r.f_hat = res.f_hat;
    out.rows.push_back(r);
  }

  // certification row; pruned cells certify against their unpruned baseline
  {
    std::mt19937_64 state_rng(derive_seed(cell.seed, 800));
    const std::vector<std::vector<double>> states =
        sample_policy_states(*env, trained.net, cfg.cert.num_states, state_rng);
    CertReport report;
    if (cell.sparsity > 0.0) {
      Cell base_cell{baseline_method(), 0.0, baseline_kappa(cell.kappa), cell.seed};
      const fs::path base_weights =
          fs::path(cells_dir) / cell_key(base_cell) / "weights.json";
      const PolicyNetwork theta = load_policy(base_weights.string());
      report = certify(theta, &trained.net, states, cfg.cert.constants,
                       cfg.cert.beta_smoothness, cfg.cert.clean_regret,
                       cfg.cert.published_c, cfg.cert.quadrature_points);
    } else {
      report = certify(trained.net, nullptr, states, cfg.cert.constants,
                       cfg.cert.beta_smoothness, cfg.cert.clean_regret,
                       cfg.cert.published_c, cfg.cert.quadrature_points);
    }
    out.cert_row = {env_name, cell.method, format_double(cell.sparsity),
                    format_double(cell.kappa), std::to_string(cell.seed)};
    for (const std::string& cell_value : report.csv_row()) {
      out.cert_row.push_back(cell_value);
    }
    std::vector<std::string> header{"env", "method", "sparsity", "kappa", "seed"};
    for (const std::string& h : CertReport::csv_header()) header.push_back(h);
    CsvWriter w(header);
    w.add_row(out.cert_row);
    w.write_file(cert_path.string());
  }

  CsvWriter rows_csv(sweep_csv_header());
  for (const SweepRow& r : out.rows) rows_csv.add_row(sweep_csv_row(r));
  rows_csv.write_file(rows_path.string());
  write_text_file(done_marker.string(), "ok\n");
  return out;
}

}  // namespace

SweepResult run_sweep(const RunConfig& cfg, const std::string& out_dir,
                      std::size_t workers) {
  fs::create_directories(out_dir);
  const std::string cells_dir = (fs::path(out_dir) / "cells").string();
  fs::create_directories(cells_dir);
  write_text_file((fs::path(out_dir) / "resolved_config.json").string(),
                  resolved_config_json(cfg).dump(1) + "\n");

  // baseline cells first (pruned cells certify against them), then the grid
  std::vector<Cell> baselines, rest;
  std::set<std::string> seen;
  for (double kappa : cfg.sweep.kappas) {
    for (std::uint64_t seed : cfg.sweep.seeds) {
      Cell c{baseline_method(), 0.0, kappa, seed};
      if (seen.insert(cell_key(c)).second) baselines.push_back(c);
    }
  }
  for (const std::string& criterion : cfg.sweep.criteria) {
    for (double sparsity : cfg.sweep.sparsities) {
      for (double kappa : cfg.sweep.kappas) {
        for (std::uint64_t seed : cfg.sweep.seeds) {
          Cell c{sparsity == 0.0 ? baseline_method() : criterion, sparsity, kappa, seed};
          if (seen.insert(cell_key(c)).second) rest.push_back(c);
        }
      }
    }
  }

  SweepResult result;
  std::mutex failures_mutex;
  auto run_phase = [&](const std::vector<Cell>& cells,
                       std::vector<CellOutput>& outputs) {
    outputs.resize(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) return;
        try {
          outputs[i] = execute_cell(cfg, cells[i], cells_dir);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(failures_mutex);
          result.failures.push_back(cell_key(cells[i]) + ": " + e.what());
        }
      }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, cells.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  };

  std::vector<CellOutput> base_out, rest_out;
  run_phase(baselines, base_out);
  run_phase(rest, rest_out);

  std::vector<std::vector<std::string>> cert_rows;
  for (const CellOutput& o : base_out) {
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
    if (!o.cert_row.empty()) cert_rows.push_back(o.cert_row);
  }
  for (const CellOutput& o : rest_out) {
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
    if (!o.cert_row.empty()) cert_rows.push_back(o.cert_row);
  }

  CsvWriter results_csv(sweep_csv_header());
  for (const SweepRow& r : result.rows) results_csv.add_row(sweep_csv_row(r));
  results_csv.write_file((fs::path(out_dir) / "results.csv").string());

  std::vector<std::string> cert_header{"env", "method", "sparsity", "kappa", "seed"};
  for (const std::string& h : CertReport::csv_header()) cert_header.push_back(h);
  CsvWriter cert_csv(cert_header);
  for (const auto& r : cert_rows) cert_csv.add_row(r);
  cert_csv.write_file((fs::path(out_dir) / "cert.csv").string());

  if (!result.failures.empty()) {
    std::string text;
    for (const std::string& f : result.failures) text += f + "\n";
    write_text_file((fs::path(out_dir) / "failures.txt").string(), text);
  }
  return result;
}

SweepResult load_results_csv(const std::string& path) {
  SweepResult r;
  r.rows = parse_rows_csv(read_text_file(path));
  return r;
}

namespace {

struct GroupKey {
  std::string method;
  double kappa;
  bool operator<(const GroupKey& o) const {
    if (method != o.method) return method < o.method;
    return kappa < o.kappa;
  }
};

}  // namespace

void write_report(const SweepResult& result, const RunConfig& cfg,
                  const std::string& out_dir) {
  fs::create_directories(out_dir);

  // Baseline means per (kappa, attack): unpruned cells with the same kappa.
  std::map<std::pair<double, std::string>, std::vector<double>> baseline_values;
  std::map<double, std::vector<double>> baseline_clean;
  for (const SweepRow& r : result.rows) {
    if (r.method == baseline_method() && r.sparsity == 0.0) {
      baseline_values[{r.kappa, r.attack}].push_back(r.robust_return);
      if (r.attack == "clean") baseline_clean[r.kappa].push_back(r.clean_return);
    }
  }
  auto baseline_mean = [&](double kappa, const std::string& attack) {
    auto it = baseline_values.find({kappa, attack});
    if (it == baseline_values.end() || it->second.empty()) {
      throw std::runtime_error("report: missing baseline cell for normalization");
    }
    return aggregate(it->second).mean;
  };

  // group rows: (method, kappa) -> sparsity -> attack -> seed values
  std::map<GroupKey, std::map<double, std::map<std::string, std::vector<double>>>> grid;
  for (const SweepRow& r : result.rows) {
    grid[{r.method, r.kappa}][r.sparsity][r.attack].push_back(r.robust_return);
  }

  const std::string env_name = result.rows.empty() ? "" : result.rows.front().env;

  CsvWriter frontier({"env", "method", "kappa", "sparsity", "norm_clean_mean",
                      "norm_clean_ci95", "norm_robust_mean", "norm_robust_ci95"});
  CsvWriter sweetspots({"env", "method", "kappa", "sweet_spot", "norm_clean",
                        "norm_robust", "avg_score"});
  CsvWriter worstseed({"env", "method", "kappa", "mode_sparsity",
                       "avg_worst_seed_abs", "avg_worst_seed_norm"});

  for (const auto& [key, by_sparsity] : grid) {
    std::vector<SweetPoint> curve;
    for (const auto& [sparsity, by_attack] : by_sparsity) {
      // normalized clean per seed
      auto clean_it = by_attack.find("clean");
      if (clean_it == by_attack.end()) continue;
      const double clean_base = baseline_mean(key.kappa, "clean");
      std::vector<double> norm_clean;
      for (double v : clean_it->second) norm_clean.push_back(normalize(v, clean_base));
      // normalized robust per seed, averaged over non-clean attacks
      std::vector<double> norm_robust;
      {
        std::vector<std::vector<double>> per_attack;
        for (const auto& [attack, values] : by_attack) {
          if (attack == "clean") continue;
          const double base = baseline_mean(key.kappa, attack);
          std::vector<double> n;
          for (double v : values) n.push_back(normalize(v, base));
          per_attack.push_back(std::move(n));
        }
        if (!per_attack.empty()) {
          norm_robust.assign(per_attack[0].size(), 0.0);
          for (const auto& n : per_attack) {
            for (std::size_t i = 0; i < n.size() && i < norm_robust.size(); ++i) {
              norm_robust[i] += n[i] / static_cast<double>(per_attack.size());
            }
          }
        }
      }
      if (norm_robust.empty()) norm_robust = norm_clean;
      const Aggregate ac = aggregate(norm_clean);
      const Aggregate ar = aggregate(norm_robust);
      frontier.add_row({env_name, key.method, format_double(key.kappa),
                        format_double(sparsity), format_double(ac.mean),
                        CsvWriter::cell(ac.ci95), format_double(ar.mean),
                        CsvWriter::cell(ar.ci95)});
      curve.push_back({sparsity, ac.mean, ar.mean});
    }
    if (key.method == baseline_method()) continue;
    if (!curve.empty()) {
      // the unpruned baseline participates in the curve at exactly 1.0
      const bool has_zero =
          std::any_of(curve.begin(), curve.end(),
                      [](const SweetPoint& p) { return p.sparsity == 0.0; });
      if (!has_zero) curve.push_back({0.0, 1.0, 1.0});
      const double spot = sweet_spot(curve);
      double nc = 0.0, nr = 0.0;
      for (const SweetPoint& pt : curve) {
        if (pt.sparsity == spot) {
          nc = pt.norm_clean;
          nr = pt.norm_robust;
        }
      }
      sweetspots.add_row({env_name, key.method, format_double(key.kappa),
                          format_double(spot), format_double(nc), format_double(nr),
                          format_double((nc + nr) / 2.0)});

      // worst-seed summary: per attack, sweet spot = sparsity maximizing the
      // seed-mean robust return (ascending scan, so ties keep the smaller
      // sparsity); representative sparsity = mode over attacks.
      std::map<std::string, double> attack_spot;
      std::map<std::string, double> best_mean;
      for (const auto& [sparsity, by_attack] : by_sparsity) {
        for (const auto& [attack, values] : by_attack) {
          if (attack == "clean") continue;
          const double mean = aggregate(values).mean;
          auto it = best_mean.find(attack);
          if (it == best_mean.end() || mean > it->second) {
            best_mean[attack] = mean;
            attack_spot[attack] = sparsity;
          }
        }
      }
      if (!attack_spot.empty()) {
        std::map<double, std::size_t> votes;
        for (const auto& [attack, spot_sparsity] : attack_spot) ++votes[spot_sparsity];
        double mode_sparsity = votes.begin()->first;
        std::size_t best_votes = votes.begin()->second;
        for (const auto& [sp, count] : votes) {
          if (count > best_votes) {  // ties keep the smaller sparsity
            best_votes = count;
            mode_sparsity = sp;
          }
        }
        double acc_abs = 0.0, acc_norm = 0.0;
        std::size_t n_attacks = 0;
        for (const auto& [attack, spot_sparsity] : attack_spot) {
          const auto& values = by_sparsity.at(spot_sparsity).at(attack);
          const double worst = worst_seed(values);
          acc_abs += worst;
          acc_norm += normalize(worst, baseline_mean(key.kappa, attack));
          ++n_attacks;
        }
        worstseed.add_row({env_name, key.method, format_double(key.kappa),
                           format_double(mode_sparsity),
                           format_double(acc_abs / static_cast<double>(n_attacks)),
                           format_double(acc_norm / static_cast<double>(n_attacks))});
      }
    }
  }

  CsvWriter results_csv(sweep_csv_header());
  for (const SweepRow& r : result.rows) results_csv.add_row(sweep_csv_row(r));
  results_csv.write_file((fs::path(out_dir) / "results.csv").string());
  frontier.write_file((fs::path(out_dir) / "frontier.csv").string());
  sweetspots.write_file((fs::path(out_dir) / "sweetspots.csv").string());
  worstseed.write_file((fs::path(out_dir) / "worstseed.csv").string());
}

void run_train(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "resolved_config.json").string(),
                  resolved_config_json(cfg).dump(1) + "\n");
  std::unique_ptr<Environment> env = make_env_from_config(cfg.env);
  TrainResult result = train_ppo(*env, cfg.ppo, cfg.prune, nullptr,
                                 (fs::path(out_dir) / "metrics.csv").string(),
                                 (fs::path(out_dir) / "checkpoint").string());
  save_policy((fs::path(out_dir) / "weights.json").string(), result.net);
}

void run_certify(const RunConfig& cfg, const std::string& weights_path,
                 const std::string& pruned_weights_path, const std::string& out_dir,
                 bool self_check, bool published_c) {
  fs::create_directories(out_dir);
  if (self_check) {
    std::string text;
    bool all = true;
    for (const auto& line : numcheck::self_check()) {
      text += std::string(line.passed ? "[PASS] " : "[FAIL] ") + line.name + " got " +
              format_double(line.got) + " expected " + format_double(line.expected) +
              "\n";
      all = all && line.passed;
    }
    text += all ? "self-check: all oracles passed\n" : "self-check: FAILURES\n";
    write_text_file((fs::path(out_dir) / "self_check.txt").string(), text);
    if (!all) throw std::runtime_error("certify --self-check failed");
  }
  const PolicyNetwork net = load_policy(weights_path);
  std::optional<PolicyNetwork> pruned;
  if (!pruned_weights_path.empty()) pruned = load_policy(pruned_weights_path);

  std::unique_ptr<Environment> env = make_env_from_config(cfg.env);
  std::mt19937_64 rng(derive_seed(cfg.ppo.seed, 900));
  const std::vector<std::vector<double>> states =
      sample_policy_states(*env, net, cfg.cert.num_states, rng);
  const CertReport report =
      certify(net, pruned ? &*pruned : nullptr, states, cfg.cert.constants,
              cfg.cert.beta_smoothness, cfg.cert.clean_regret,
              published_c || cfg.cert.published_c, cfg.cert.quadrature_points);
  write_text_file((fs::path(out_dir) / "cert_report.txt").string(), report.to_text());
  CsvWriter csv(CertReport::csv_header());
  csv.add_row(report.csv_row());
  csv.write_file((fs::path(out_dir) / "cert_report.csv").string());
}

void run_attack_eval(const RunConfig& cfg, const std::string& weights_path,
                     const std::string& out_dir) {
  fs::create_directories(out_dir);
  const PolicyNetwork net = load_policy(weights_path);
  std::unique_ptr<Environment> env = make_env_from_config(cfg.env);
  CsvWriter csv(eval_csv_header());
  for (std::size_t i = 0; i < cfg.attack.families.size(); ++i) {
    AttackSpec spec = cfg.attack.base;
    spec.family = attack_from_name(cfg.attack.families[i]);
    if (spec.family == AttackFamily::kLearned) {
      if (!cfg.attack.adversary_weights.empty()) {
        spec.adversary =
            std::make_shared<AdversaryNet>(load_adversary(cfg.attack.adversary_weights));
      } else {
        // train one against this victim and keep it next to the results
        PpoConfig adv_cfg = cfg.ppo;
        AdversaryTrainResult adv = train_adversary(net, *env, spec, adv_cfg);
        save_adversary((fs::path(out_dir) / "adversary.json").string(), adv.net);
        spec.adversary = std::make_shared<AdversaryNet>(std::move(adv.net));
      }
    }
    std::mt19937_64 setup_rng(derive_seed(cfg.ppo.seed, 600 + i));
    std::unique_ptr<StateAttack> attack =
        make_attack(spec, net, *env, cfg.ppo.gamma, setup_rng);
    std::mt19937_64 eval_rng(derive_seed(cfg.ppo.seed, 700 + i));
    const EvalResult res =
        evaluate(net, *env, attack.get(), cfg.attack.episodes, eval_rng);
    csv.add_row({cfg.attack.families[i], format_double(spec.epsilon),
                 std::to_string(cfg.attack.episodes), format_double(res.mean),
                 CsvWriter::cell(res.sem), CsvWriter::cell(res.ci95),
                 format_double(res.f_hat)});
  }
  csv.write_file((fs::path(out_dir) / "attack_eval.csv").string());
}

void run_prune_once(const RunConfig& cfg, const std::string& weights_path,
                    double sparsity, const std::string& criterion,
                    const std::string& out_dir) {
  fs::create_directories(out_dir);
  PolicyNetwork net = load_policy(weights_path);
  const PolicyNetwork original = net;

  PruneConfig pcfg = cfg.prune;
  pcfg.criterion = criterion_from_name(criterion);
  pcfg.target_sparsity = sparsity;
  pcfg.update_interval = 1;
  pcfg.burn_in_fraction = 0.0;

  std::vector<Matrix*> weights = prunable_weights(net, pcfg.prune_critic);
  std::vector<const Matrix*> views(weights.begin(), weights.end());
  PruneState state = PruneState::init(pcfg, views);
  prune_step(state, views, {}, 1, 1);  // one-shot: t = T = 1
  apply_masks(weights, state.masks);

  save_policy((fs::path(out_dir) / "pruned_weights.json").string(), net);
  MaskFile masks{prunable_roles(net, pcfg.prune_critic), state.masks};
  save_masks((fs::path(out_dir) / "masks.json").string(), masks);

  const double lip_before = surrogate_lipschitz(original);
  const double lip_after = surrogate_lipschitz(net);
  const double bound_before = global_bound(original, cfg.cert.constants, cfg.cert.published_c);
  const double bound_after = global_bound(net, cfg.cert.constants, cfg.cert.published_c);
  std::ostringstream text;
  text << "criterion = " << criterion << "\n";
  text << "target_sparsity = " << format_double(sparsity) << "\n";
  text << "realized_sparsity = " << format_double(state.realized_sparsity()) << "\n";
  text << "lipschitz_before = " << format_double(lip_before) << "\n";
  text << "lipschitz_after = " << format_double(lip_after) << "\n";
  text << "lipschitz_delta = " << format_double(lip_after - lip_before) << "\n";
  text << "global_bound_before = " << format_double(bound_before) << "\n";
  text << "global_bound_after = " << format_double(bound_after) << "\n";
  text << "global_bound_delta = " << format_double(bound_after - bound_before) << "\n";
  write_text_file((fs::path(out_dir) / "cert_delta.txt").string(), text.str());
}

}  // namespace prunecert
