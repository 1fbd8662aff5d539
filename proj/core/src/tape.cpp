#include "prunecert/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace prunecert {

Tape::Id Tape::push(Node n) {
  n.grad = Matrix(n.value.rows, n.value.cols);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::Id Tape::leaf(Matrix value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::Id Tape::matmul_nt(Id x, Id w) {
  Node n;
  n.op = Op::kMatmulNT;
  n.a = x;
  n.b = w;
  n.value = prunecert::matmul_nt(nodes_[x].value, nodes_[w].value);
  return push(std::move(n));
}

Tape::Id Tape::matmul(Id a, Id b) {
  Node n;
  n.op = Op::kMatmul;
  n.a = a;
  n.b = b;
  n.value = prunecert::matmul(nodes_[a].value, nodes_[b].value);
  return push(std::move(n));
}

namespace {
void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}
}  // namespace

Tape::Id Tape::add(Id a, Id b) {
  check_same_shape(nodes_[a].value, nodes_[b].value, "tape add");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = nodes_[a].value;
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] += nodes_[b].value.data[i];
  return push(std::move(n));
}

Tape::Id Tape::sub(Id a, Id b) {
  check_same_shape(nodes_[a].value, nodes_[b].value, "tape sub");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.value = nodes_[a].value;
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] -= nodes_[b].value.data[i];
  return push(std::move(n));
}

Tape::Id Tape::mul(Id a, Id b) {
  check_same_shape(nodes_[a].value, nodes_[b].value, "tape mul");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.value = hadamard(nodes_[a].value, nodes_[b].value);
  return push(std::move(n));
}

Tape::Id Tape::div(Id a, Id b) {
  check_same_shape(nodes_[a].value, nodes_[b].value, "tape div");
  Node n;
  n.op = Op::kDiv;
  n.a = a;
  n.b = b;
  n.value = nodes_[a].value;
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] /= nodes_[b].value.data[i];
  return push(std::move(n));
}

Tape::Id Tape::add_row(Id a, Id bias) {
  const Matrix& x = nodes_[a].value;
  const Matrix& v = nodes_[bias].value;
  if (v.rows != 1 || v.cols != x.cols) {
    throw std::invalid_argument("tape add_row: bias must be (1, cols)");
  }
  Node n;
  n.op = Op::kAddRow;
  n.a = a;
  n.b = bias;
  n.value = x;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) n.value(i, j) += v.data[j];
  return push(std::move(n));
}

Tape::Id Tape::sub_col(Id a, Id c) {
  const Matrix& x = nodes_[a].value;
  const Matrix& v = nodes_[c].value;
  if (v.cols != 1 || v.rows != x.rows) {
    throw std::invalid_argument("tape sub_col: operand must be (rows, 1)");
  }
  Node n;
  n.op = Op::kSubCol;
  n.a = a;
  n.b = c;
  n.value = x;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) n.value(i, j) -= v.data[i];
  return push(std::move(n));
}

Tape::Id Tape::scale(Id a, double s) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.s0 = s;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v *= s;
  return push(std::move(n));
}

Tape::Id Tape::add_scalar(Id a, double s) {
  Node n;
  n.op = Op::kAddScalar;
  n.a = a;
  n.s0 = s;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v += s;
  return push(std::move(n));
}

Tape::Id Tape::tanh_(Id a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = std::tanh(v);
  return push(std::move(n));
}

Tape::Id Tape::relu(Id a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

Tape::Id Tape::exp_(Id a) {
  Node n;
  n.op = Op::kExp;
  n.a = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = std::exp(v);
  return push(std::move(n));
}

Tape::Id Tape::log_(Id a) {
  Node n;
  n.op = Op::kLog;
  n.a = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = std::log(v);
  return push(std::move(n));
}

Tape::Id Tape::square(Id a) {
  Node n;
  n.op = Op::kSquare;
  n.a = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = v * v;
  return push(std::move(n));
}

Tape::Id Tape::sqrt_(Id a) {
  Node n;
  n.op = Op::kSqrt;
  n.a = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = std::sqrt(v);
  return push(std::move(n));
}

Tape::Id Tape::abs_(Id a) {
  Node n;
  n.op = Op::kAbs;
  n.a = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = std::fabs(v);
  return push(std::move(n));
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  Node n;
  n.op = Op::kClamp;
  n.a = a;
  n.s0 = lo;
  n.s1 = hi;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = v < lo ? lo : (v > hi ? hi : v);
  return push(std::move(n));
}

Tape::Id Tape::min_(Id a, Id b) {
  check_same_shape(nodes_[a].value, nodes_[b].value, "tape min");
  Node n;
  n.op = Op::kMin;
  n.a = a;
  n.b = b;
  n.value = nodes_[a].value;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) {
    const double bv = nodes_[b].value.data[i];
    if (bv < n.value.data[i]) n.value.data[i] = bv;
  }
  return push(std::move(n));
}

Tape::Id Tape::max_(Id a, Id b) {
  check_same_shape(nodes_[a].value, nodes_[b].value, "tape max");
  Node n;
  n.op = Op::kMax;
  n.a = a;
  n.b = b;
  n.value = nodes_[a].value;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) {
    const double bv = nodes_[b].value.data[i];
    if (bv > n.value.data[i]) n.value.data[i] = bv;
  }
  return push(std::move(n));
}

Tape::Id Tape::sum_all(Id a) {
  Node n;
  n.op = Op::kSumAll;
  n.a = a;
  double acc = 0.0;
  for (double v : nodes_[a].value.data) acc += v;
  n.value = Matrix(1, 1, {acc});
  return push(std::move(n));
}

Tape::Id Tape::mean_all(Id a) {
  Node n;
  n.op = Op::kMeanAll;
  n.a = a;
  double acc = 0.0;
  for (double v : nodes_[a].value.data) acc += v;
  const double count = static_cast<double>(nodes_[a].value.data.size());
  n.value = Matrix(1, 1, {acc / count});
  return push(std::move(n));
}

Tape::Id Tape::row_sum(Id a) {
  const Matrix& x = nodes_[a].value;
  Node n;
  n.op = Op::kRowSum;
  n.a = a;
  n.value = Matrix(x.rows, 1);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) acc += x(i, j);
    n.value.data[i] = acc;
  }
  return push(std::move(n));
}

Tape::Id Tape::mul_row_const(Id a, std::vector<double> v) {
  const Matrix& x = nodes_[a].value;
  if (v.size() != x.cols) {
    throw std::invalid_argument("tape mul_row_const: length mismatch");
  }
  Node n;
  n.op = Op::kMulRowConst;
  n.a = a;
  n.payload = std::move(v);
  n.value = x;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) n.value(i, j) *= n.payload[j];
  return push(std::move(n));
}

Tape::Id Tape::logsumexp_blocks(Id a, std::size_t block) {
  const Matrix& x = nodes_[a].value;
  if (block == 0 || x.cols % block != 0) {
    throw std::invalid_argument("tape logsumexp_blocks: bad block size");
  }
  const std::size_t t = x.cols / block;
  Node n;
  n.op = Op::kLogSumExpBlocks;
  n.a = a;
  n.k0 = block;
  n.value = Matrix(x.rows, t);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t bl = 0; bl < t; ++bl) {
      const double* z = x.data.data() + i * x.cols + bl * block;
      double m = z[0];
      for (std::size_t k = 1; k < block; ++k) m = std::max(m, z[k]);
      double acc = 0.0;
      for (std::size_t k = 0; k < block; ++k) acc += std::exp(z[k] - m);
      n.value(i, bl) = m + std::log(acc);
    }
  }
  return push(std::move(n));
}

Tape::Id Tape::softmax_blocks(Id a, std::size_t block) {
  const Matrix& x = nodes_[a].value;
  if (block == 0 || x.cols % block != 0) {
    throw std::invalid_argument("tape softmax_blocks: bad block size");
  }
  const std::size_t t = x.cols / block;
  Node n;
  n.op = Op::kSoftmaxBlocks;
  n.a = a;
  n.k0 = block;
  n.value = Matrix(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t bl = 0; bl < t; ++bl) {
      const double* z = x.data.data() + i * x.cols + bl * block;
      double* p = n.value.data.data() + i * x.cols + bl * block;
      double m = z[0];
      for (std::size_t k = 1; k < block; ++k) m = std::max(m, z[k]);
      double acc = 0.0;
      for (std::size_t k = 0; k < block; ++k) {
        p[k] = std::exp(z[k] - m);
        acc += p[k];
      }
      for (std::size_t k = 0; k < block; ++k) p[k] /= acc;
    }
  }
  return push(std::move(n));
}

Tape::Id Tape::select_per_block(Id a, std::size_t block, std::vector<std::size_t> idx) {
  const Matrix& x = nodes_[a].value;
  if (block == 0 || x.cols % block != 0) {
    throw std::invalid_argument("tape select_per_block: bad block size");
  }
  const std::size_t t = x.cols / block;
  if (idx.size() != x.rows * t) {
    throw std::invalid_argument("tape select_per_block: index count mismatch");
  }
  Node n;
  n.op = Op::kSelectPerBlock;
  n.a = a;
  n.k0 = block;
  n.ipayload = std::move(idx);
  n.value = Matrix(x.rows, t);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t bl = 0; bl < t; ++bl) {
      const std::size_t k = n.ipayload[i * t + bl];
      if (k >= block) throw std::out_of_range("tape select_per_block: index out of range");
      n.value(i, bl) = x(i, bl * block + k);
    }
  }
  return push(std::move(n));
}

Tape::Id Tape::concat_cols(Id a, Id b) {
  const Matrix& x = nodes_[a].value;
  const Matrix& y = nodes_[b].value;
  if (x.rows != y.rows) throw std::invalid_argument("tape concat_cols: row mismatch");
  Node n;
  n.op = Op::kConcatCols;
  n.a = a;
  n.b = b;
  n.k0 = x.cols;
  n.value = Matrix(x.rows, x.cols + y.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) n.value(i, j) = x(i, j);
    for (std::size_t j = 0; j < y.cols; ++j) n.value(i, x.cols + j) = y(i, j);
  }
  return push(std::move(n));
}

void Tape::zero_grads() {
  for (Node& n : nodes_) {
    std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  }
}

void Tape::backward(Id output) {
  const Matrix& v = nodes_[output].value;
  if (v.rows != 1 || v.cols != 1) {
    throw std::invalid_argument("tape backward: output must be scalar");
  }
  backward_seeded(output, Matrix(1, 1, {1.0}));
}

void Tape::backward_seeded(Id output, const Matrix& seed) {
  Node& out = nodes_[output];
  check_same_shape(out.value, seed, "tape backward seed");
  for (std::size_t i = 0; i < seed.data.size(); ++i) out.grad.data[i] += seed.data[i];
  for (std::size_t i = output + 1; i-- > 0;) {
    backprop_one(nodes_[i]);
  }
}

void Tape::backprop_one(Node& node) {
  const Matrix& g = node.grad;
  switch (node.op) {
    case Op::kLeaf:
      break;
    case Op::kMatmulNT: {
      // C = X W^T : dX += dC W ; dW += dC^T X
      Node& xn = nodes_[node.a];
      Node& wn = nodes_[node.b];
      const Matrix& x = xn.value;
      const Matrix& w = wn.value;
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double* gi = g.data.data() + i * g.cols;
        double* dxi = xn.grad.data.data() + i * x.cols;
        for (std::size_t j = 0; j < w.rows; ++j) {
          const double gij = gi[j];
          if (gij == 0.0) continue;
          const double* wj = w.data.data() + j * w.cols;
          for (std::size_t k = 0; k < w.cols; ++k) dxi[k] += gij * wj[k];
        }
        for (std::size_t j = 0; j < w.rows; ++j) {
          const double gij = gi[j];
          if (gij == 0.0) continue;
          double* dwj = wn.grad.data.data() + j * w.cols;
          const double* xi = x.data.data() + i * x.cols;
          for (std::size_t k = 0; k < w.cols; ++k) dwj[k] += gij * xi[k];
        }
      }
      break;
    }
    case Op::kMatmul: {
      // C = A B : dA += dC B^T ; dB += A^T dC
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      const Matrix& a = an.value;
      const Matrix& b = bn.value;
      for (std::size_t i = 0; i < a.rows; ++i) {
        const double* gi = g.data.data() + i * g.cols;
        double* dai = an.grad.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
          const double* bk = b.data.data() + k * b.cols;
          double acc = 0.0;
          for (std::size_t j = 0; j < b.cols; ++j) acc += gi[j] * bk[j];
          dai[k] += acc;
        }
        const double* ai = a.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
          const double aik = ai[k];
          if (aik == 0.0) continue;
          double* dbk = bn.grad.data.data() + k * b.cols;
          for (std::size_t j = 0; j < b.cols; ++j) dbk[j] += aik * gi[j];
        }
      }
      break;
    }
    case Op::kAdd: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        an.grad.data[i] += g.data[i];
        bn.grad.data[i] += g.data[i];
      }
      break;
    }
    case Op::kSub: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        an.grad.data[i] += g.data[i];
        bn.grad.data[i] -= g.data[i];
      }
      break;
    }
    case Op::kMul: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        an.grad.data[i] += g.data[i] * bn.value.data[i];
        bn.grad.data[i] += g.data[i] * an.value.data[i];
      }
      break;
    }
    case Op::kDiv: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double bv = bn.value.data[i];
        an.grad.data[i] += g.data[i] / bv;
        bn.grad.data[i] -= g.data[i] * an.value.data[i] / (bv * bv);
      }
      break;
    }
    case Op::kAddRow: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      const std::size_t cols = g.cols;
      for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          an.grad(i, j) += g(i, j);
          bn.grad.data[j] += g(i, j);
        }
      }
      break;
    }
    case Op::kSubCol: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < g.cols; ++j) {
          an.grad(i, j) += g(i, j);
          bn.grad.data[i] -= g(i, j);
        }
      }
      break;
    }
    case Op::kScale: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i)
        an.grad.data[i] += g.data[i] * node.s0;
      break;
    }
    case Op::kAddScalar: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i) an.grad.data[i] += g.data[i];
      break;
    }
    case Op::kTanh: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double y = node.value.data[i];
        an.grad.data[i] += g.data[i] * (1.0 - y * y);
      }
      break;
    }
    case Op::kRelu: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        if (an.value.data[i] > 0.0) an.grad.data[i] += g.data[i];
      }
      break;
    }
    case Op::kExp: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i)
        an.grad.data[i] += g.data[i] * node.value.data[i];
      break;
    }
    case Op::kLog: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i)
        an.grad.data[i] += g.data[i] / an.value.data[i];
      break;
    }
    case Op::kSquare: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i)
        an.grad.data[i] += g.data[i] * 2.0 * an.value.data[i];
      break;
    }
    case Op::kSqrt: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double y = node.value.data[i];
        if (y > 0.0) an.grad.data[i] += g.data[i] * 0.5 / y;
      }
      break;
    }
    case Op::kAbs: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double x = an.value.data[i];
        if (x > 0.0) an.grad.data[i] += g.data[i];
        else if (x < 0.0) an.grad.data[i] -= g.data[i];
      }
      break;
    }
    case Op::kClamp: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double x = an.value.data[i];
        if (x > node.s0 && x < node.s1) an.grad.data[i] += g.data[i];
      }
      break;
    }
    case Op::kMin: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        if (an.value.data[i] <= bn.value.data[i]) an.grad.data[i] += g.data[i];
        else bn.grad.data[i] += g.data[i];
      }
      break;
    }
    case Op::kMax: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        if (an.value.data[i] >= bn.value.data[i]) an.grad.data[i] += g.data[i];
        else bn.grad.data[i] += g.data[i];
      }
      break;
    }
    case Op::kSumAll: {
      Node& an = nodes_[node.a];
      const double gd = g.data[0];
      for (double& d : an.grad.data) d += gd;
      break;
    }
    case Op::kMeanAll: {
      Node& an = nodes_[node.a];
      const double gd = g.data[0] / static_cast<double>(an.grad.data.size());
      for (double& d : an.grad.data) d += gd;
      break;
    }
    case Op::kRowSum: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < an.grad.rows; ++i) {
        const double gi = g.data[i];
        for (std::size_t j = 0; j < an.grad.cols; ++j) an.grad(i, j) += gi;
      }
      break;
    }
    case Op::kMulRowConst: {
      Node& an = nodes_[node.a];
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j)
          an.grad(i, j) += g(i, j) * node.payload[j];
      break;
    }
    case Op::kLogSumExpBlocks: {
      Node& an = nodes_[node.a];
      const std::size_t block = node.k0;
      const std::size_t t = node.value.cols;
      for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t bl = 0; bl < t; ++bl) {
          const double gv = g(i, bl);
          if (gv == 0.0) continue;
          const double lse = node.value(i, bl);
          const double* z = an.value.data.data() + i * an.value.cols + bl * block;
          double* dz = an.grad.data.data() + i * an.value.cols + bl * block;
          for (std::size_t k = 0; k < block; ++k) dz[k] += gv * std::exp(z[k] - lse);
        }
      }
      break;
    }
    case Op::kSoftmaxBlocks: {
      Node& an = nodes_[node.a];
      const std::size_t block = node.k0;
      const std::size_t t = node.value.cols / block;
      for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t bl = 0; bl < t; ++bl) {
          const double* p = node.value.data.data() + i * node.value.cols + bl * block;
          const double* gp = g.data.data() + i * g.cols + bl * block;
          double dot = 0.0;
          for (std::size_t k = 0; k < block; ++k) dot += gp[k] * p[k];
          double* dz = an.grad.data.data() + i * an.value.cols + bl * block;
          for (std::size_t k = 0; k < block; ++k) dz[k] += p[k] * (gp[k] - dot);
        }
      }
      break;
    }
    case Op::kSelectPerBlock: {
      Node& an = nodes_[node.a];
      const std::size_t block = node.k0;
      const std::size_t t = node.value.cols;
      for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t bl = 0; bl < t; ++bl) {
          const std::size_t k = node.ipayload[i * t + bl];
          an.grad(i, bl * block + k) += g(i, bl);
        }
      }
      break;
    }
    case Op::kConcatCols: {
      Node& an = nodes_[node.a];
      Node& bn = nodes_[node.b];
      const std::size_t split = node.k0;
      for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < split; ++j) an.grad(i, j) += g(i, j);
        for (std::size_t j = split; j < g.cols; ++j) bn.grad(i, j - split) += g(i, j);
      }
      break;
    }
  }
}

}  // namespace prunecert
