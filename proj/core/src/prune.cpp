#include "prunecert/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "prunecert/rng.hpp"

namespace prunecert {

std::string criterion_name(PruneCriterion c) {
  switch (c) {
    case PruneCriterion::kNone: return "none";
    case PruneCriterion::kMagnitude: return "magnitude";
    case PruneCriterion::kMagnitudeSte: return "magnitude_ste";
    case PruneCriterion::kRandom: return "random";
    case PruneCriterion::kSaliency: return "saliency";
  }
  return "none";
}

PruneCriterion criterion_from_name(const std::string& name) {
  if (name == "none") return PruneCriterion::kNone;
  if (name == "magnitude") return PruneCriterion::kMagnitude;
  if (name == "magnitude_ste") return PruneCriterion::kMagnitudeSte;
  if (name == "random") return PruneCriterion::kRandom;
  if (name == "saliency") return PruneCriterion::kSaliency;
  throw std::invalid_argument("unknown prune criterion: " + name);
}

std::string schedule_name(PruneSchedule s) {
  return s == PruneSchedule::kLinear ? "linear" : "cubic";
}

PruneSchedule schedule_from_name(const std::string& name) {
  if (name == "linear") return PruneSchedule::kLinear;
  if (name == "cubic") return PruneSchedule::kCubic;
  throw std::invalid_argument("unknown prune schedule: " + name);
}

double scheduled_sparsity(PruneSchedule schedule, std::size_t t, std::size_t T,
                          double burn_in_fraction, double target) {
  if (t > T) throw std::invalid_argument("scheduled_sparsity: t > T");
  if (target <= 0.0) return 0.0;
  if (T == 0) return target;
  const double progress = static_cast<double>(t) / static_cast<double>(T);
  if (schedule == PruneSchedule::kLinear) {
    // remove target over the first target-fraction of the run
    return target * std::min(1.0, progress / target);
  }
  if (progress <= burn_in_fraction) return 0.0;
  const double u = (progress - burn_in_fraction) / (1.0 - burn_in_fraction);
  const double ramp = 1.0 - (1.0 - u) * (1.0 - u) * (1.0 - u);
  return target * ramp;
}

std::vector<double> erk_layer_sparsities(
    std::span<const std::pair<std::size_t, std::size_t>> layer_shapes,
    double global_sparsity) {
  if (!(global_sparsity >= 0.0 && global_sparsity < 1.0)) {
    throw std::invalid_argument("erk: global sparsity must be in [0,1)");
  }
  const std::size_t n_layers = layer_shapes.size();
  std::vector<double> raw(n_layers);
  std::vector<double> count(n_layers);
  double total = 0.0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const double r = static_cast<double>(layer_shapes[l].first);
    const double c = static_cast<double>(layer_shapes[l].second);
    raw[l] = (r + c) / (r * c);
    count[l] = r * c;
    total += count[l];
  }
  const double keep_budget = (1.0 - global_sparsity) * total;

  std::vector<double> density(n_layers, 0.0);
  std::vector<bool> clipped(n_layers, false);
  double budget_left = keep_budget;
  for (;;) {
    double mass = 0.0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (!clipped[l]) mass += raw[l] * count[l];
    }
    if (mass <= 0.0) {
      if (budget_left > 0.5) throw std::invalid_argument("erk: infeasible target");
      break;
    }
    const double scale = budget_left / mass;
    bool newly_clipped = false;
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (clipped[l]) continue;
      if (raw[l] * scale >= 1.0) {
        clipped[l] = true;
        density[l] = 1.0;
        budget_left -= count[l];
        newly_clipped = true;
      }
    }
    if (!newly_clipped) {
      for (std::size_t l = 0; l < n_layers; ++l) {
        if (!clipped[l]) density[l] = raw[l] * scale;
      }
      break;
    }
    if (budget_left < 0.0) throw std::invalid_argument("erk: infeasible target");
  }
  std::vector<double> sparsity(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) sparsity[l] = 1.0 - density[l];
  return sparsity;
}

std::vector<std::size_t> erk_keep_counts(
    std::span<const std::pair<std::size_t, std::size_t>> layer_shapes,
    double global_sparsity, std::span<const std::size_t> caps, bool erk_enabled) {
  const std::size_t n_layers = layer_shapes.size();
  std::size_t total = 0;
  for (const auto& [r, c] : layer_shapes) total += r * c;
  std::size_t target_keep = static_cast<std::size_t>(
      std::llround((1.0 - global_sparsity) * static_cast<double>(total)));

  std::vector<double> want(n_layers);
  if (erk_enabled) {
    const std::vector<double> sp = erk_layer_sparsities(layer_shapes, global_sparsity);
    for (std::size_t l = 0; l < n_layers; ++l) {
      want[l] = (1.0 - sp[l]) * static_cast<double>(layer_shapes[l].first *
                                                    layer_shapes[l].second);
    }
  } else {
    for (std::size_t l = 0; l < n_layers; ++l) {
      want[l] = (1.0 - global_sparsity) * static_cast<double>(layer_shapes[l].first *
                                                              layer_shapes[l].second);
    }
  }

  std::vector<std::size_t> keep(n_layers);
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    keep[l] = std::min(static_cast<std::size_t>(std::floor(want[l])), caps[l]);
    assigned += keep[l];
  }
  // Largest-remainder distribution of what is left, capped per layer.
  while (assigned < target_keep) {
    std::size_t best = n_layers;
    double best_frac = -1.0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (keep[l] >= caps[l]) continue;
      const double frac = want[l] - static_cast<double>(keep[l]);
      if (frac > best_frac) {
        best_frac = frac;
        best = l;
      }
    }
    if (best == n_layers) break;  // every layer capped
    ++keep[best];
    ++assigned;
  }
  return keep;
}

std::vector<Matrix> prune_scores(PruneCriterion criterion,
                                 std::span<const Matrix> weights,
                                 std::span<const Matrix> grads,
                                 std::mt19937_64& rng) {
  std::vector<Matrix> scores;
  scores.reserve(weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const Matrix& w = weights[l];
    Matrix s(w.rows, w.cols);
    switch (criterion) {
      case PruneCriterion::kMagnitude:
      case PruneCriterion::kMagnitudeSte:
        for (std::size_t i = 0; i < w.data.size(); ++i) s.data[i] = std::fabs(w.data[i]);
        break;
      case PruneCriterion::kRandom:
        for (std::size_t i = 0; i < w.data.size(); ++i) s.data[i] = uniform01(rng);
        break;
      case PruneCriterion::kSaliency: {
        if (l >= grads.size() || grads[l].data.size() != w.data.size()) {
          throw std::invalid_argument("saliency scoring needs a gradient snapshot");
        }
        for (std::size_t i = 0; i < w.data.size(); ++i) {
          s.data[i] = std::fabs(w.data[i] * grads[l].data[i]);
        }
        break;
      }
      case PruneCriterion::kNone:
        throw std::invalid_argument("prune_scores: criterion is none");
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

Matrix top_k_mask(const Matrix& scores, const Matrix& weights,
                  std::size_t keep_count, const Matrix* current_mask) {
  const std::size_t n = scores.data.size();
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (current_mask && current_mask->data[i] == 0.0) continue;
    order.push_back(i);
  }
  // keep priority: higher score, then larger |w|, then lower index
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.data[a] != scores.data[b]) return scores.data[a] > scores.data[b];
    const double wa = std::fabs(weights.data[a]);
    const double wb = std::fabs(weights.data[b]);
    if (wa != wb) return wa > wb;
    return a < b;
  });
  Matrix mask(scores.rows, scores.cols);
  const std::size_t kept = std::min(keep_count, order.size());
  for (std::size_t i = 0; i < kept; ++i) mask.data[order[i]] = 1.0;
  return mask;
}

PruneState PruneState::init(const PruneConfig& config,
                            std::span<const Matrix* const> weights) {
  PruneState s;
  s.config = config;
  s.rng.seed(config.rng_seed);
  for (const Matrix* w : weights) {
    Matrix m(w->rows, w->cols);
    std::fill(m.data.begin(), m.data.end(), 1.0);
    s.masks.push_back(std::move(m));
  }
  return s;
}

double PruneState::realized_sparsity() const {
  std::size_t zeros = 0, total = 0;
  for (const Matrix& m : masks) {
    total += m.data.size();
    for (double v : m.data) {
      if (v == 0.0) ++zeros;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

std::size_t PruneState::total_params() const {
  std::size_t total = 0;
  for (const Matrix& m : masks) total += m.data.size();
  return total;
}

bool prune_event_due(const PruneConfig& config, std::size_t t, std::size_t T) {
  if (config.criterion == PruneCriterion::kNone || config.target_sparsity <= 0.0) {
    return false;
  }
  if (t == 0 || T == 0) return false;
  const double progress = static_cast<double>(t) / static_cast<double>(T);
  if (progress <= config.burn_in_fraction) return false;
  return t % config.update_interval == 0 || t == T;
}

bool prune_step(PruneState& state, std::span<const Matrix* const> weights,
                std::span<const Matrix* const> grads, std::size_t t, std::size_t T) {
  const PruneConfig& cfg = state.config;
  const double sparsity =
      scheduled_sparsity(cfg.schedule, t, T, cfg.burn_in_fraction, cfg.target_sparsity);

  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::vector<std::size_t> caps;
  const bool regrow = gradients_flow_through_mask(cfg.criterion);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    shapes.emplace_back(weights[l]->rows, weights[l]->cols);
    if (regrow) {
      caps.push_back(weights[l]->data.size());
    } else {
      std::size_t kept = 0;
      for (double v : state.masks[l].data) kept += (v != 0.0) ? 1 : 0;
      caps.push_back(kept);
    }
  }
  const std::vector<std::size_t> keep =
      erk_keep_counts(shapes, sparsity, caps, cfg.erk_enabled);

  std::vector<Matrix> weight_vals;
  std::vector<Matrix> grad_vals;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weight_vals.push_back(*weights[l]);
    if (!grads.empty()) grad_vals.push_back(*grads[l]);
  }
  const std::vector<Matrix> scores =
      prune_scores(cfg.criterion, weight_vals, grad_vals, state.rng);

  bool changed = false;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const Matrix* cur = regrow ? nullptr : &state.masks[l];
    Matrix mask = top_k_mask(scores[l], weight_vals[l], keep[l], cur);
    if (!(mask == state.masks[l])) changed = true;
    state.masks[l] = std::move(mask);
  }
  ++state.events;
  return changed;
}

void apply_masks(std::span<Matrix* const> weights, std::span<const Matrix> masks) {
  if (weights.size() != masks.size()) {
    throw std::invalid_argument("apply_masks: layer count mismatch");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Matrix& w = *weights[l];
    const Matrix& m = masks[l];
    if (w.rows != m.rows || w.cols != m.cols) {
      throw std::invalid_argument("apply_masks: shape mismatch");
    }
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      if (m.data[i] == 0.0) w.data[i] = 0.0;
    }
  }
}

bool gradients_flow_through_mask(PruneCriterion c) {
  return c == PruneCriterion::kMagnitudeSte;
}

void mask_gradients(std::span<Matrix* const> grads, std::span<const Matrix> masks) {
  for (std::size_t l = 0; l < grads.size(); ++l) {
    Matrix& g = *grads[l];
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      if (masks[l].data[i] == 0.0) g.data[i] = 0.0;
    }
  }
}

std::vector<Matrix*> prunable_weights(PolicyNetwork& net, bool prune_critic) {
  std::vector<Matrix*> out;
  for (DenseLayer& l : net.actor) out.push_back(&l.w);
  if (prune_critic) {
    for (DenseLayer& l : net.critic) out.push_back(&l.w);
  }
  return out;
}

std::vector<std::string> prunable_roles(const PolicyNetwork& net, bool prune_critic) {
  std::vector<std::string> out(net.actor.size(), "actor-trunk");
  if (prune_critic) {
    out.insert(out.end(), net.critic.size(), "critic-trunk");
  }
  return out;
}

}  // namespace prunecert
