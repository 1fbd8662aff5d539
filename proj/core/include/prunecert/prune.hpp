#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "prunecert/matrix.hpp"
#include "prunecert/policy.hpp"

namespace prunecert {

enum class PruneCriterion { kNone, kMagnitude, kMagnitudeSte, kRandom, kSaliency };
enum class PruneSchedule { kLinear, kCubic };

std::string criterion_name(PruneCriterion c);
PruneCriterion criterion_from_name(const std::string& name);
std::string schedule_name(PruneSchedule s);
PruneSchedule schedule_from_name(const std::string& name);

struct PruneConfig {
  PruneCriterion criterion = PruneCriterion::kNone;
  double target_sparsity = 0.0;          // in [0,1)
  PruneSchedule schedule = PruneSchedule::kLinear;
  double burn_in_fraction = 0.0;         // cubic default 0.25 set by configs
  std::size_t update_interval = 128;     // optimizer steps between mask updates
  bool erk_enabled = true;
  bool prune_critic = true;
  std::uint64_t rng_seed = 0;
};

/// Scheduled global sparsity at optimizer step t of T. Linear ramps to the
/// target over the first target-fraction of steps; cubic waits out the
/// burn-in then follows target*(1-(1-u)^3).
double scheduled_sparsity(PruneSchedule schedule, std::size_t t, std::size_t T,
                          double burn_in_fraction, double target);

/// ERK allocation: per-layer densities proportional to (rows+cols)/(rows*cols),
/// scaled to the global budget, clipped to [0,1] with iterative re-scaling.
/// Returns per-layer sparsities.
std::vector<double> erk_layer_sparsities(
    std::span<const std::pair<std::size_t, std::size_t>> layer_shapes,
    double global_sparsity);

/// Integer per-layer keep counts for the given global sparsity: ERK densities
/// (or uniform when disabled) integerized by largest remainder, honoring
/// per-layer caps. Total kept matches round((1-s)*total) exactly when feasible.
std::vector<std::size_t> erk_keep_counts(
    std::span<const std::pair<std::size_t, std::size_t>> layer_shapes,
    double global_sparsity, std::span<const std::size_t> caps, bool erk_enabled);

/// Keep-priority scores, higher = keep. magnitude/magnitude_ste: |w|;
/// random: seeded uniforms; saliency: |w * grad|.
std::vector<Matrix> prune_scores(PruneCriterion criterion,
                                 std::span<const Matrix> weights,
                                 std::span<const Matrix> grads,
                                 std::mt19937_64& rng);

/// Per-layer mask with the top keep_count entries by (score, |w|, index).
Matrix top_k_mask(const Matrix& scores, const Matrix& weights,
                  std::size_t keep_count, const Matrix* current_mask);

struct PruneState {
  PruneConfig config;
  std::vector<Matrix> masks;  // aligned with the prunable weight list
  std::mt19937_64 rng;
  std::size_t events = 0;

  static PruneState init(const PruneConfig& config,
                         std::span<const Matrix* const> weights);

  double realized_sparsity() const;
  std::size_t total_params() const;
};

/// Whether a mask update is due at optimizer step t of T.
bool prune_event_due(const PruneConfig& config, std::size_t t, std::size_t T);

/// Recompute masks at step t: scheduled sparsity -> ERK keep counts -> per
/// layer top-k. Non-STE criteria never regrow (caps = currently kept); STE
/// re-ranks every weight. Returns true if masks changed.
bool prune_step(PruneState& state, std::span<const Matrix* const> weights,
                std::span<const Matrix* const> grads, std::size_t t, std::size_t T);

/// Zero weights where the mask is zero.
void apply_masks(std::span<Matrix* const> weights, std::span<const Matrix> masks);

/// Gradient treatment after backward: for magnitude/random/saliency the
/// gradients of masked weights are zeroed; for magnitude_ste they flow.
bool gradients_flow_through_mask(PruneCriterion c);
void mask_gradients(std::span<Matrix* const> grads, std::span<const Matrix> masks);

/// The prunable weight matrices of a policy network (actor always, critic when
/// enabled), in a fixed order shared with mask files.
std::vector<Matrix*> prunable_weights(PolicyNetwork& net, bool prune_critic);
std::vector<std::string> prunable_roles(const PolicyNetwork& net, bool prune_critic);

}  // namespace prunecert
