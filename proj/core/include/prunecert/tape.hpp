#pragma once

#include <cstdint>
#include <vector>

#include "prunecert/matrix.hpp"

namespace prunecert {

/// Reverse-mode autodiff over Matrix-valued nodes. A tape is single-use and
/// single-threaded: record a computation forward, then run backward() one or
/// more times (with zero_grads() in between for fresh seeds). Node ids are
/// indices into the tape; parents always precede children, so the reverse
/// creation order is a valid topological order and the backward pass visits
/// each node exactly once, deterministically.
class Tape {
 public:
  using Id = std::size_t;
  static constexpr Id npos = static_cast<Id>(-1);

  Id leaf(Matrix value);
  Id constant(Matrix value) { return leaf(std::move(value)); }

  // x (n,k) * w (m,k)^T -> (n,m); the natural layer shape for out-by-in weights
  Id matmul_nt(Id x, Id w);
  Id matmul(Id a, Id b);

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id div(Id a, Id b);
  Id add_row(Id a, Id bias);   // (n,m) + (1,m) broadcast over rows
  Id sub_col(Id a, Id c);      // (n,m) - (n,1) broadcast over cols

  Id scale(Id a, double s);
  Id add_scalar(Id a, double s);
  Id neg(Id a) { return scale(a, -1.0); }

  Id tanh_(Id a);
  Id relu(Id a);  // subgradient at 0 is 0
  Id exp_(Id a);
  Id log_(Id a);
  Id square(Id a);
  Id sqrt_(Id a);  // subgradient at 0 is 0
  Id abs_(Id a);   // subgradient at 0 is 0
  Id clamp(Id a, double lo, double hi);  // zero gradient outside (lo, hi)
  Id min_(Id a, Id b);                   // ties route gradient to a
  Id max_(Id a, Id b);                   // ties route gradient to a

  Id sum_all(Id a);   // -> (1,1)
  Id mean_all(Id a);  // -> (1,1)
  Id row_sum(Id a);   // (n,m) -> (n,1)

  Id mul_row_const(Id a, std::vector<double> v);  // (n,m) * const (1,m)

  // Blockwise softmax machinery: each row of a (n, t*b) holds t blocks of b
  // logits. block = b.
  Id logsumexp_blocks(Id a, std::size_t block);              // -> (n, t)
  Id softmax_blocks(Id a, std::size_t block);                // -> (n, t*b)
  Id select_per_block(Id a, std::size_t block,
                      std::vector<std::size_t> idx);         // -> (n, t)

  Id concat_cols(Id a, Id b);

  /// Backward from a scalar (1x1) output, seed 1. Throws if not scalar.
  void backward(Id output);
  /// Backward with an explicit seed matching the node's shape.
  void backward_seeded(Id output, const Matrix& seed);
  void zero_grads();

  const Matrix& value(Id id) const { return nodes_[id].value; }
  const Matrix& grad(Id id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }
  double scalar(Id id) const { return nodes_[id].value.data[0]; }

 private:
  enum class Op : std::uint8_t {
    kLeaf, kMatmulNT, kMatmul, kAdd, kSub, kMul, kDiv, kAddRow, kSubCol,
    kScale, kAddScalar, kTanh, kRelu, kExp, kLog, kSquare, kSqrt, kAbs,
    kClamp, kMin, kMax, kSumAll, kMeanAll, kRowSum, kMulRowConst,
    kLogSumExpBlocks, kSoftmaxBlocks, kSelectPerBlock, kConcatCols,
  };

  struct Node {
    Op op = Op::kLeaf;
    Id a = npos;
    Id b = npos;
    Matrix value;
    Matrix grad;
    double s0 = 0.0;
    double s1 = 0.0;
    std::size_t k0 = 0;  // block size / concat split
    std::vector<double> payload;
    std::vector<std::size_t> ipayload;
  };

  Id push(Node n);
  void backprop_one(Node& node);

  std::vector<Node> nodes_;
};

}  // namespace prunecert
