// Reverse-mode differentiation over dense row-major Eigen matrices.
//
// A Tape records every op applied to its Vars in creation order, which is
// already a valid topological order; backward() walks it once in reverse.
#ifndef RELOCL_NUMCORE_TAPE_HPP
#define RELOCL_NUMCORE_TAPE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace relocl::num {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Shape and bit-pattern equality (NaN-safe, no size assertions).
template <typename Scalar>
bool same_bits(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 ||
          std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0);
}

template <typename Scalar>
bool same_bits(const std::vector<Matrix<Scalar>>& a, const std::vector<Matrix<Scalar>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

class NumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  MatMulNT,
  Add,
  AddRow,
  Sub,
  Mul,
  Scale,
  Relu,
  GatherRows,
  ScatterAddRows,
  Sum,
  Mean,
  MeanRows,
  NormalizeRows,
  SoftmaxCrossEntropy,
  CosineEmbedding,
};

template <typename Scalar>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] Tape<Scalar>* tape() const { return tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] const Matrix<Scalar>& value() const { return tape_->value(*this); }
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] Scalar scalar() const { return tape_->scalar(*this); }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using MatrixT = Matrix<Scalar>;

  struct Node {
    OpKind kind = OpKind::Constant;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    MatrixT value;
    MatrixT aux;               // softmax probabilities, cosine partials
    std::vector<int> index;    // gather/scatter rows, class targets
    Scalar factor = Scalar(0); // Scale factor, cosine sign
    bool requires_grad = false;
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input (a model parameter).
  Var<Scalar> leaf(MatrixT value) {
    check_finite(value, "leaf");
    return push(Node{OpKind::Leaf, 0, 0, std::move(value), {}, {}, Scalar(0), true});
  }

  Var<Scalar> constant(MatrixT value) {
    check_finite(value, "constant");
    return push(Node{OpKind::Constant, 0, 0, std::move(value), {}, {}, Scalar(0), false});
  }

  [[nodiscard]] const MatrixT& value(Var<Scalar> v) const { return node(v).value; }

  [[nodiscard]] Scalar scalar(Var<Scalar> v) const {
    const auto& m = node(v).value;
    if (m.size() != 1) throw NumError("scalar(): value is not 1x1");
    return m(0, 0);
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const Node& node_at(std::size_t id) const { return nodes_.at(id); }

  // Records a new op. Used by the free functions below.
  Var<Scalar> record(OpKind kind, std::size_t lhs, std::size_t rhs, MatrixT value,
                     bool requires_grad, MatrixT aux = {}, std::vector<int> index = {},
                     Scalar factor = Scalar(0)) {
    check_finite(value, "op output");
    return push(Node{kind, lhs, rhs, std::move(value), std::move(aux), std::move(index), factor,
                     requires_grad});
  }

  [[nodiscard]] bool requires_grad(Var<Scalar> v) const { return node(v).requires_grad; }

  void check_owner(Var<Scalar> v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw NumError("Var does not belong to this tape");
    }
  }

  // Reverse sweep from a scalar loss. Entry i holds dLoss/d(node i), or an
  // empty matrix when node i does not influence the loss.
  [[nodiscard]] std::vector<MatrixT> backward(Var<Scalar> loss) const;

 private:
  const Node& node(Var<Scalar> v) const {
    check_owner(v);
    return nodes_[v.id()];
  }

  Var<Scalar> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  static void check_finite(const MatrixT& m, const char* what) {
    if (!m.allFinite()) throw NumError(std::string("non-finite value in ") + what);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
Tape<Scalar>& same_tape(Var<Scalar> a, Var<Scalar> b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw NumError("operands live on different tapes");
  return *a.tape();
}

template <typename Scalar>
void accumulate(Matrix<Scalar>& slot, const Matrix<Scalar>& g) {
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  auto& t = detail::same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw NumError("matmul shape mismatch " + detail::shape_str(a.rows(), a.cols()) + " * " +
                   detail::shape_str(b.rows(), b.cols()));
  }
  Matrix<Scalar> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return t.record(OpKind::MatMul, a.id(), b.id(), std::move(out),
                  t.requires_grad(a) || t.requires_grad(b));
}

// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  auto& t = detail::same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw NumError("matmul_nt shape mismatch " + detail::shape_str(a.rows(), a.cols()) + " * " +
                   detail::shape_str(b.cols(), b.rows()));
  }
  Matrix<Scalar> out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  return t.record(OpKind::MatMulNT, a.id(), b.id(), std::move(out),
                  t.requires_grad(a) || t.requires_grad(b));
}

// Elementwise sum. A 1xN right operand is broadcast over the rows of a.
template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  auto& t = detail::same_tape(a, b);
  const bool grad = t.requires_grad(a) || t.requires_grad(b);
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return t.record(OpKind::Add, a.id(), b.id(), a.value() + b.value(), grad);
  }
  if (b.rows() == 1 && a.cols() == b.cols()) {
    Matrix<Scalar> out = a.value().rowwise() + b.value().row(0);
    return t.record(OpKind::AddRow, a.id(), b.id(), std::move(out), grad);
  }
  throw NumError("add shape mismatch " + detail::shape_str(a.rows(), a.cols()) + " + " +
                 detail::shape_str(b.rows(), b.cols()));
}

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  auto& t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw NumError("sub shape mismatch");
  return t.record(OpKind::Sub, a.id(), b.id(), a.value() - b.value(),
                  t.requires_grad(a) || t.requires_grad(b));
}

// Elementwise (Hadamard) product.
template <typename Scalar>
Var<Scalar> cwise_product(Var<Scalar> a, Var<Scalar> b) {
  auto& t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw NumError("mul shape mismatch");
  return t.record(OpKind::Mul, a.id(), b.id(), a.value().cwiseProduct(b.value()),
                  t.requires_grad(a) || t.requires_grad(b));
}

template <typename Scalar>
Var<Scalar> operator*(Scalar factor, Var<Scalar> a) {
  auto& t = *a.tape();
  return t.record(OpKind::Scale, a.id(), a.id(), factor * a.value(), t.requires_grad(a), {}, {},
                  factor);
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  auto& t = *a.tape();
  return t.record(OpKind::Relu, a.id(), a.id(), a.value().cwiseMax(Scalar(0)), t.requires_grad(a));
}

// out[i] = a[index[i]]
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> a, std::vector<int> index) {
  auto& t = *a.tape();
  const auto& src = a.value();
  Matrix<Scalar> out(static_cast<Eigen::Index>(index.size()), src.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= src.rows()) throw NumError("gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = src.row(index[i]);
  }
  return t.record(OpKind::GatherRows, a.id(), a.id(), std::move(out), t.requires_grad(a), {},
                  std::move(index));
}

// out[index[i]] += a[i], out has `rows` rows.
template <typename Scalar>
Var<Scalar> scatter_add_rows(Var<Scalar> a, std::vector<int> index, Eigen::Index rows) {
  auto& t = *a.tape();
  const auto& src = a.value();
  if (static_cast<Eigen::Index>(index.size()) != src.rows()) {
    throw NumError("scatter_add_rows: index length must equal row count");
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(rows, src.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= rows) throw NumError("scatter_add_rows index out of range");
    out.row(index[i]) += src.row(static_cast<Eigen::Index>(i));
  }
  return t.record(OpKind::ScatterAddRows, a.id(), a.id(), std::move(out), t.requires_grad(a), {},
                  std::move(index));
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  auto& t = *a.tape();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(OpKind::Sum, a.id(), a.id(), std::move(out), t.requires_grad(a));
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a) {
  auto& t = *a.tape();
  if (a.value().size() == 0) throw NumError("mean of empty tensor");
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().mean();
  return t.record(OpKind::Mean, a.id(), a.id(), std::move(out), t.requires_grad(a));
}

// Column-wise mean over rows: (N x d) -> (1 x d).
template <typename Scalar>
Var<Scalar> mean_rows(Var<Scalar> a) {
  auto& t = *a.tape();
  if (a.rows() == 0) throw NumError("mean_rows of empty tensor");
  Matrix<Scalar> out = a.value().colwise().mean();
  return t.record(OpKind::MeanRows, a.id(), a.id(), std::move(out), t.requires_grad(a));
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// Mean over rows of -log softmax(row)[target]. A single 1xC row with one
// target is the plain per-vector loss.
// Each row scaled to unit length: x / sqrt(|x|^2 + eps).
template <typename Scalar>
Var<Scalar> normalize_rows(Var<Scalar> a, Scalar eps = Scalar(1e-6)) {
  auto& t = *a.tape();
  const auto& x = a.value();
  Matrix<Scalar> norms = (x.rowwise().squaredNorm().array() + eps).sqrt().matrix();
  Matrix<Scalar> out = x.array().colwise() / norms.col(0).array();
  return t.record(OpKind::NormalizeRows, a.id(), a.id(), std::move(out), t.requires_grad(a), std::move(norms));
}

template <typename Scalar>
Var<Scalar> softmax_cross_entropy(Var<Scalar> logits, std::vector<int> targets) {
  auto& t = *logits.tape();
  const auto& z = logits.value();
  if (z.cols() < 2) throw NumError("softmax_cross_entropy needs at least 2 classes");
  if (static_cast<Eigen::Index>(targets.size()) != z.rows() || z.rows() == 0) {
    throw NumError("softmax_cross_entropy: one target per logit row required");
  }
  Matrix<Scalar> probs(z.rows(), z.cols());
  Scalar total = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0 || target >= z.cols()) throw NumError("softmax_cross_entropy: target out of range");
    const Scalar m = z.row(r).maxCoeff();
    const Scalar lse = m + std::log((z.row(r).array() - m).exp().sum());
    total += lse - z(r, target);
    probs.row(r) = (z.row(r).array() - lse).exp().matrix();
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / static_cast<Scalar>(z.rows());
  return t.record(OpKind::SoftmaxCrossEntropy, logits.id(), logits.id(), std::move(out),
                  t.requires_grad(logits), std::move(probs), std::move(targets));
}

// sign=+1: 1 - cos(a, b); sign=-1: max(0, cos(a, b)). Operands are read as
// flat vectors.
template <typename Scalar>
Var<Scalar> cosine_embedding_loss(Var<Scalar> a, Var<Scalar> b, int sign) {
  auto& t = detail::same_tape(a, b);
  if (sign != 1 && sign != -1) throw NumError("cosine_embedding_loss: sign must be +1 or -1");
  if (a.value().size() != b.value().size()) throw NumError("cosine_embedding_loss: length mismatch");
  const auto av = a.value().reshaped();
  const auto bv = b.value().reshaped();
  const Scalar na = av.norm();
  const Scalar nb = bv.norm();
  if (na == Scalar(0) || nb == Scalar(0)) {
    throw NumError("cosine_embedding_loss: cosine undefined for zero vector");
  }
  const Scalar cos = av.dot(bv) / (na * nb);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = sign > 0 ? Scalar(1) - cos : std::max(Scalar(0), cos);
  // aux row 0 = dcos/da, row 1 = dcos/db (flattened)
  Matrix<Scalar> partials(2, av.size());
  partials.row(0) = (bv / (na * nb) - cos * av / (na * na)).transpose();
  partials.row(1) = (av / (na * nb) - cos * bv / (nb * nb)).transpose();
  const Scalar dloss_dcos = sign > 0 ? Scalar(-1) : (cos > Scalar(0) ? Scalar(1) : Scalar(0));
  return t.record(OpKind::CosineEmbedding, a.id(), b.id(), std::move(out),
                  t.requires_grad(a) || t.requires_grad(b), std::move(partials), {}, dloss_dcos);
}

// ---------------------------------------------------------------------------
// Backward

template <typename Scalar>
std::vector<Matrix<Scalar>> Tape<Scalar>::backward(Var<Scalar> loss) const {
  check_owner(loss);
  if (nodes_[loss.id()].value.size() != 1) throw NumError("backward: loss must be a scalar");

  std::vector<MatrixT> grads(nodes_.size());
  grads[loss.id()] = MatrixT::Ones(1, 1);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || grads[i].size() == 0) continue;
    const MatrixT& g = grads[i];
    auto wants = [&](std::size_t id) { return nodes_[id].requires_grad; };

    switch (n.kind) {
      case OpKind::Leaf:
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        const auto& a = nodes_[n.lhs].value;
        const auto& b = nodes_[n.rhs].value;
        if (wants(n.lhs)) detail::accumulate<Scalar>(grads[n.lhs], g * b.transpose());
        if (wants(n.rhs)) detail::accumulate<Scalar>(grads[n.rhs], a.transpose() * g);
        break;
      }
      case OpKind::MatMulNT: {
        const auto& a = nodes_[n.lhs].value;
        const auto& b = nodes_[n.rhs].value;
        if (wants(n.lhs)) detail::accumulate<Scalar>(grads[n.lhs], g * b);
        if (wants(n.rhs)) detail::accumulate<Scalar>(grads[n.rhs], g.transpose() * a);
        break;
      }
      case OpKind::Add:
        if (wants(n.lhs)) detail::accumulate<Scalar>(grads[n.lhs], g);
        if (wants(n.rhs)) detail::accumulate<Scalar>(grads[n.rhs], g);
        break;
      case OpKind::AddRow:
        if (wants(n.lhs)) detail::accumulate<Scalar>(grads[n.lhs], g);
        if (wants(n.rhs)) detail::accumulate<Scalar>(grads[n.rhs], g.colwise().sum());
        break;
      case OpKind::Sub:
        if (wants(n.lhs)) detail::accumulate<Scalar>(grads[n.lhs], g);
        if (wants(n.rhs)) detail::accumulate<Scalar>(grads[n.rhs], -g);
        break;
      case OpKind::Mul: {
        const auto& a = nodes_[n.lhs].value;
        const auto& b = nodes_[n.rhs].value;
        if (wants(n.lhs)) detail::accumulate<Scalar>(grads[n.lhs], g.cwiseProduct(b));
        if (wants(n.rhs)) detail::accumulate<Scalar>(grads[n.rhs], g.cwiseProduct(a));
        break;
      }
      case OpKind::Scale:
        detail::accumulate<Scalar>(grads[n.lhs], n.factor * g);
        break;
      case OpKind::Relu: {
        const auto& in = nodes_[n.lhs].value;
        MatrixT local = (in.array() > Scalar(0)).select(g, Scalar(0));
        detail::accumulate<Scalar>(grads[n.lhs], local);
        break;
      }
      case OpKind::GatherRows: {
        const auto& in = nodes_[n.lhs].value;
        MatrixT local = MatrixT::Zero(in.rows(), in.cols());
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          local.row(n.index[r]) += g.row(static_cast<Eigen::Index>(r));
        }
        detail::accumulate<Scalar>(grads[n.lhs], local);
        break;
      }
      case OpKind::ScatterAddRows: {
        MatrixT local(static_cast<Eigen::Index>(n.index.size()), g.cols());
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          local.row(static_cast<Eigen::Index>(r)) = g.row(n.index[r]);
        }
        detail::accumulate<Scalar>(grads[n.lhs], local);
        break;
      }
      case OpKind::Sum: {
        const auto& in = nodes_[n.lhs].value;
        detail::accumulate<Scalar>(grads[n.lhs], MatrixT::Constant(in.rows(), in.cols(), g(0, 0)));
        break;
      }
      case OpKind::Mean: {
        const auto& in = nodes_[n.lhs].value;
        const Scalar s = g(0, 0) / static_cast<Scalar>(in.size());
        detail::accumulate<Scalar>(grads[n.lhs], MatrixT::Constant(in.rows(), in.cols(), s));
        break;
      }
      case OpKind::MeanRows: {
        const auto& in = nodes_[n.lhs].value;
        MatrixT local = g.replicate(in.rows(), 1) / static_cast<Scalar>(in.rows());
        detail::accumulate<Scalar>(grads[n.lhs], local);
        break;
      }
      case OpKind::NormalizeRows: {
        // d(x/|x|) applied to g: (g - y (y.g)) / |x|, row by row
        const auto& y = n.value;
        const MatrixT along = (y.cwiseProduct(g)).rowwise().sum();
        MatrixT local = (g - y.cwiseProduct(along.replicate(1, y.cols()))).array().colwise() / n.aux.col(0).array();
        detail::accumulate<Scalar>(grads[n.lhs], local);
        break;
      }
      case OpKind::SoftmaxCrossEntropy: {
        MatrixT local = n.aux;
        for (std::size_t r = 0; r < n.index.size(); ++r) {
          local(static_cast<Eigen::Index>(r), n.index[r]) -= Scalar(1);
        }
        local *= g(0, 0) / static_cast<Scalar>(local.rows());
        detail::accumulate<Scalar>(grads[n.lhs], local);
        break;
      }
      case OpKind::CosineEmbedding: {
        const Scalar s = g(0, 0) * n.factor;
        if (wants(n.lhs)) {
          const auto& a = nodes_[n.lhs].value;
          MatrixT local = (s * n.aux.row(0)).reshaped(a.rows(), a.cols());
          detail::accumulate<Scalar>(grads[n.lhs], local);
        }
        if (wants(n.rhs)) {
          const auto& b = nodes_[n.rhs].value;
          MatrixT local = (s * n.aux.row(1)).reshaped(b.rows(), b.cols());
          detail::accumulate<Scalar>(grads[n.rhs], local);
        }
        break;
      }
    }
  }
  return grads;
}

// dLoss/dparam for each param. Params that do not influence the loss get a
// zero gradient; if none of them does, the tape is disconnected and that is
// an error.
template <typename Scalar>
std::vector<Matrix<Scalar>> gradient(Var<Scalar> loss, std::span<const Var<Scalar>> params) {
  if (!loss.valid()) throw NumError("gradient: invalid loss handle");
  Tape<Scalar>& tape = *loss.tape();
  if (loss.value().size() != 1) throw NumError("gradient: loss must be a scalar");
  for (const auto& p : params) tape.check_owner(p);

  auto all = tape.backward(loss);
  std::vector<Matrix<Scalar>> out;
  out.reserve(params.size());
  bool any = false;
  for (const auto& p : params) {
    auto& g = all[p.id()];
    if (g.size() == 0) {
      out.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    } else {
      any = true;
      out.push_back(std::move(g));
    }
  }
  if (!params.empty() && !any) throw NumError("gradient: loss is disconnected from every parameter");
  return out;
}

}  // namespace relocl::num

#endif  // RELOCL_NUMCORE_TAPE_HPP
