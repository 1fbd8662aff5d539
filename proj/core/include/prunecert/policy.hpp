#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "prunecert/distributions.hpp"
#include "prunecert/matrix.hpp"
#include "prunecert/tape.hpp"

namespace prunecert {

enum class Activation { kTanh, kRelu, kIdentity };

double activation_lipschitz(Activation a);  // 1 for all three
std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct DenseLayer {
  Matrix w;  // (out, in)
  std::vector<double> b;
  Activation act = Activation::kIdentity;
};

/// Actor-critic MLP pair. The actor trunk realizes g_theta (Gaussian mean or
/// categorical logits, last layer identity); the critic is a separate trunk
/// ending in a scalar. Gaussian heads carry a fixed state-independent std.
struct PolicyNetwork {
  std::vector<DenseLayer> actor;
  std::vector<DenseLayer> critic;
  HeadFamily head = HeadFamily::kGaussian;
  std::vector<double> sigma;

  std::size_t input_dim() const;
  std::size_t output_dim() const;  // action dim or K
};

/// Orthogonal-init MLP pair, hidden gain sqrt(2), actor output gain 0.01,
/// critic output gain 1, zero biases.
PolicyNetwork make_mlp_policy(std::size_t input_dim, std::size_t output_dim,
                              std::span<const std::size_t> hidden, Activation act,
                              HeadFamily head, double sigma, std::mt19937_64& rng);

Matrix orthogonal_init(std::size_t rows, std::size_t cols, double gain,
                       std::mt19937_64& rng);

std::vector<double> trunk_forward(const std::vector<DenseLayer>& layers,
                                  std::span<const double> input);

struct ForwardResult {
  ActionDistribution dist;
  double value = 0.0;
};

ForwardResult forward(const PolicyNetwork& net, std::span<const double> obs);
double value_forward(const PolicyNetwork& net, std::span<const double> obs);

/// Trunk forward on a tape over a batch (rows = samples). If leaf_ws/leaf_bs
/// are non-null the layer parameters are registered as leaves and their ids
/// returned, so gradients w.r.t. the parameters are available after backward.
Tape::Id trunk_forward_tape(Tape& tape, const std::vector<DenseLayer>& layers,
                            Tape::Id input, std::vector<Tape::Id>* leaf_ws = nullptr,
                            std::vector<Tape::Id>* leaf_bs = nullptr);

struct TrunkLeaves {
  std::vector<Tape::Id> ws;
  std::vector<Tape::Id> bs;
};

/// Register layer parameters once; several forwards can then share them so
/// gradients accumulate across all uses.
TrunkLeaves register_trunk_leaves(Tape& tape, const std::vector<DenseLayer>& layers);
Tape::Id trunk_forward_with_leaves(Tape& tape, const std::vector<DenseLayer>& layers,
                                   Tape::Id input, const TrunkLeaves& leaves);

/// J[i][j] = d g_i / d obs_j for the actor trunk, one backward pass per output
/// row. Shape (output_dim, input_dim).
Matrix input_jacobian(const PolicyNetwork& net, std::span<const double> obs);

/// Jacobian of the actor output w.r.t. the flattened actor parameters
/// (per layer: weights row-major, then biases). Shape (output_dim, n_params).
Matrix actor_param_jacobian(const PolicyNetwork& net, std::span<const double> obs);

std::vector<double> flatten_actor_params(const PolicyNetwork& net);
std::size_t actor_param_count(const PolicyNetwork& net);

}  // namespace prunecert
