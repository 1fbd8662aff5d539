#include "prunecert/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "prunecert/rng.hpp"

namespace prunecert {

double activation_lipschitz(Activation) { return 1.0; }

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation: " + name);
}

std::size_t PolicyNetwork::input_dim() const {
  if (actor.empty()) throw std::logic_error("empty policy network");
  return actor.front().w.cols;
}

std::size_t PolicyNetwork::output_dim() const {
  if (actor.empty()) throw std::logic_error("empty policy network");
  return actor.back().w.rows;
}

Matrix orthogonal_init(std::size_t rows, std::size_t cols, double gain,
                       std::mt19937_64& rng) {
  // Gram-Schmidt on gaussian rows (or columns when rows > cols), which is all
  // the orthogonality these small trunks need.
  const bool tall = rows >= cols;
  const std::size_t n = tall ? rows : cols;
  const std::size_t k = tall ? cols : rows;
  std::vector<std::vector<double>> basis(k, std::vector<double>(n));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) basis[i][j] = gauss(rng);
    for (std::size_t p = 0; p < i; ++p) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += basis[i][j] * basis[p][j];
      for (std::size_t j = 0; j < n; ++j) basis[i][j] -= dot * basis[p][j];
    }
    double norm = 0.0;
    for (double v : basis[i]) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // degenerate draw; fall back to a coordinate direction
      std::fill(basis[i].begin(), basis[i].end(), 0.0);
      basis[i][i % n] = 1.0;
      norm = 1.0;
    }
    for (double& v : basis[i]) v /= norm;
  }
  Matrix w(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      w(i, j) = gain * (tall ? basis[j][i] : basis[i][j]);
    }
  }
  return w;
}

namespace {
std::vector<DenseLayer> make_trunk(std::size_t input_dim, std::size_t output_dim,
                                   std::span<const std::size_t> hidden, Activation act,
                                   double out_gain, std::mt19937_64& rng) {
  std::vector<DenseLayer> layers;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    DenseLayer l;
    l.w = orthogonal_init(h, in, std::sqrt(2.0), rng);
    l.b.assign(h, 0.0);
    l.act = act;
    layers.push_back(std::move(l));
    in = h;
  }
  DenseLayer out;
  out.w = orthogonal_init(output_dim, in, out_gain, rng);
  out.b.assign(output_dim, 0.0);
  out.act = Activation::kIdentity;
  layers.push_back(std::move(out));
  return layers;
}
}  // namespace

PolicyNetwork make_mlp_policy(std::size_t input_dim, std::size_t output_dim,
                              std::span<const std::size_t> hidden, Activation act,
                              HeadFamily head, double sigma, std::mt19937_64& rng) {
  PolicyNetwork net;
  net.head = head;
  net.actor = make_trunk(input_dim, output_dim, hidden, act, 0.01, rng);
  net.critic = make_trunk(input_dim, 1, hidden, act, 1.0, rng);
  if (head == HeadFamily::kGaussian) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian sigma must be > 0");
    net.sigma.assign(output_dim, sigma);
  }
  return net;
}

std::vector<double> trunk_forward(const std::vector<DenseLayer>& layers,
                                  std::span<const double> input) {
  std::vector<double> x(input.begin(), input.end());
  std::vector<double> y;
  for (const DenseLayer& l : layers) {
    if (x.size() != l.w.cols) {
      throw std::invalid_argument("trunk_forward: dimension mismatch");
    }
    y.assign(l.w.rows, 0.0);
    for (std::size_t i = 0; i < l.w.rows; ++i) {
      const double* wi = l.w.data.data() + i * l.w.cols;
      double acc = l.b[i];
      for (std::size_t j = 0; j < l.w.cols; ++j) acc += wi[j] * x[j];
      switch (l.act) {
        case Activation::kTanh: acc = std::tanh(acc); break;
        case Activation::kRelu: acc = acc > 0.0 ? acc : 0.0; break;
        case Activation::kIdentity: break;
      }
      y[i] = acc;
    }
    x.swap(y);
  }
  return x;
}

ForwardResult forward(const PolicyNetwork& net, std::span<const double> obs) {
  ForwardResult r;
  std::vector<double> g = trunk_forward(net.actor, obs);
  if (net.head == HeadFamily::kGaussian) {
    r.dist = ActionDistribution::gaussian(std::move(g), net.sigma);
  } else {
    r.dist = ActionDistribution::categorical(std::move(g));
  }
  r.value = value_forward(net, obs);
  return r;
}

double value_forward(const PolicyNetwork& net, std::span<const double> obs) {
  return trunk_forward(net.critic, obs)[0];
}

TrunkLeaves register_trunk_leaves(Tape& tape, const std::vector<DenseLayer>& layers) {
  TrunkLeaves leaves;
  for (const DenseLayer& l : layers) {
    leaves.ws.push_back(tape.leaf(l.w));
    leaves.bs.push_back(tape.leaf(Matrix::row(l.b)));
  }
  return leaves;
}

Tape::Id trunk_forward_with_leaves(Tape& tape, const std::vector<DenseLayer>& layers,
                                   Tape::Id input, const TrunkLeaves& leaves) {
  Tape::Id x = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Tape::Id z = tape.add_row(tape.matmul_nt(x, leaves.ws[i]), leaves.bs[i]);
    switch (layers[i].act) {
      case Activation::kTanh: x = tape.tanh_(z); break;
      case Activation::kRelu: x = tape.relu(z); break;
      case Activation::kIdentity: x = z; break;
    }
  }
  return x;
}

Tape::Id trunk_forward_tape(Tape& tape, const std::vector<DenseLayer>& layers,
                            Tape::Id input, std::vector<Tape::Id>* leaf_ws,
                            std::vector<Tape::Id>* leaf_bs) {
  TrunkLeaves leaves = register_trunk_leaves(tape, layers);
  if (leaf_ws) *leaf_ws = leaves.ws;
  if (leaf_bs) *leaf_bs = leaves.bs;
  return trunk_forward_with_leaves(tape, layers, input, leaves);
}

Matrix input_jacobian(const PolicyNetwork& net, std::span<const double> obs) {
  if (obs.size() != net.input_dim()) {
    throw std::invalid_argument("input_jacobian: observation dimension mismatch");
  }
  Tape tape;
  Tape::Id s = tape.leaf(Matrix::row(obs));
  Tape::Id out = trunk_forward_tape(tape, net.actor, s);
  const std::size_t m = tape.value(out).cols;
  Matrix jac(m, obs.size());
  for (std::size_t i = 0; i < m; ++i) {
    tape.zero_grads();
    Matrix seed(1, m);
    seed.data[i] = 1.0;
    tape.backward_seeded(out, seed);
    const Matrix& g = tape.grad(s);
    for (std::size_t j = 0; j < obs.size(); ++j) jac(i, j) = g.data[j];
  }
  return jac;
}

Matrix actor_param_jacobian(const PolicyNetwork& net, std::span<const double> obs) {
  Tape tape;
  Tape::Id s = tape.leaf(Matrix::row(obs));
  std::vector<Tape::Id> ws, bs;
  Tape::Id out = trunk_forward_tape(tape, net.actor, s, &ws, &bs);
  const std::size_t m = tape.value(out).cols;
  const std::size_t p = actor_param_count(net);
  Matrix jac(m, p);
  for (std::size_t i = 0; i < m; ++i) {
    tape.zero_grads();
    Matrix seed(1, m);
    seed.data[i] = 1.0;
    tape.backward_seeded(out, seed);
    std::size_t col = 0;
    for (std::size_t l = 0; l < net.actor.size(); ++l) {
      for (double g : tape.grad(ws[l]).data) jac(i, col++) = g;
      for (double g : tape.grad(bs[l]).data) jac(i, col++) = g;
    }
  }
  return jac;
}

std::vector<double> flatten_actor_params(const PolicyNetwork& net) {
  std::vector<double> v;
  v.reserve(actor_param_count(net));
  for (const DenseLayer& l : net.actor) {
    v.insert(v.end(), l.w.data.begin(), l.w.data.end());
    v.insert(v.end(), l.b.begin(), l.b.end());
  }
  return v;
}

std::size_t actor_param_count(const PolicyNetwork& net) {
  std::size_t p = 0;
  for (const DenseLayer& l : net.actor) p += l.w.size() + l.b.size();
  return p;
}

}  // namespace prunecert
