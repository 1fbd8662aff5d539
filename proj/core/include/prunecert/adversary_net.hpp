#pragma once

#include <random>
#include <vector>

#include "prunecert/policy.hpp"

namespace prunecert {

/// Learned-adversary network. Continuous observation spaces use the mu /
/// log-sigma heads (a diagonal Gaussian over perturbations); one-hot tile
/// observations use the per-tile categorical head. The mask-logit head is part
/// of the architecture and serialized with it; attack application samples the
/// Bernoulli mask at the configured attack rate.
struct AdversaryNet {
  std::vector<DenseLayer> trunk;
  DenseLayer head_mu;
  DenseLayer head_logsigma;
  DenseLayer head_mask;
  DenseLayer head_tiles;
  std::vector<DenseLayer> critic;
  bool categorical = false;
  std::size_t tiles = 0;
  std::size_t blocks = 0;

  std::size_t input_dim() const;
};

/// init_sigma seeds the log-sigma head bias; it must sit strictly inside the
/// [1e-4, epsilon] clamp or the head starts with a dead gradient.
AdversaryNet make_gaussian_adversary(std::size_t obs_dim,
                                     std::span<const std::size_t> hidden,
                                     Activation act, std::mt19937_64& rng,
                                     double init_sigma = 0.5);

AdversaryNet make_categorical_adversary(std::size_t obs_dim, std::size_t tiles,
                                        std::size_t blocks,
                                        std::span<const std::size_t> hidden,
                                        Activation act, std::mt19937_64& rng);

}  // namespace prunecert
