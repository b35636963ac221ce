#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uiim/tensor.hpp"

namespace uiim {

/// A persistent learnable tensor. Lives outside any tape; a forward pass
/// references it through `Tape::param` and backward accumulates into `grad`.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records one forward pass. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep. A tape is meant to
/// be discarded after backward; parameters persist across tapes.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  Var param(Parameter& p);

  /// Reverse sweep from a scalar root. Throws if the root is not a scalar or
  /// if backward already ran on this tape without `zero_grad`.
  void backward(Var root);
  void zero_grad();

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient of the last backward root with respect to this node (zeros if
  /// the node was not reached).
  Tensor grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
  /// Mutable gradient buffer for a node, zero-initialized on first use.
  /// Returns nullptr when the node does not require a gradient.
  Tensor* grad_buffer(std::size_t id);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Ops. Every op validates shapes and throws ShapeError naming the op and the
// offending shapes. Matrix ops view rank-1 tensors as 1 x n rows.

Var matmul(Var a, Var b);
/// Batched matmul over rank-3 tensors: (B, m, k) x (B, k, n) -> (B, m, n).
Var bmm(Var a, Var b);
/// Swaps the last two axes (rank 2 or 3).
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
/// Adds a length-cols bias to every row of `a`.
Var add_bias(Var a, Var bias);
Var scale(Var a, double s);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
/// Throws DomainError if any input is not strictly positive.
Var log(Var a);

/// Row-wise softmax with row-max subtraction.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
/// Output row i is row ids[i] of `a`.
Var gather_rows(Var a, std::vector<std::size_t> ids);
/// Output is rows x 1 with entry i = a[i, ids[i]].
Var pick(Var a, std::vector<std::size_t> ids);
Var reshape(Var a, Shape shape);

Var sum(Var a);
Var mean(Var a);
/// Row-wise Euclidean norm sqrt(sum x^2 + eps), eps = kNormEpsilon; rows x 1.
Var l2_norm(Var a);
/// Row-wise inner product; rows x 1.
Var dot(Var a, Var b);

inline constexpr double kNormEpsilon = 1e-12;

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::size_t checked = 0;
  std::string worst;  // "<param>[index]" of the largest relative error
};

/// Compares analytic gradients against central differences
/// (f(p+h) - f(p-h)) / 2h for every element of every parameter. Relative
/// error is |a - n| / max(|a|, |n|, floor). `f` must be deterministic and build
/// its graph on the tape it is given.
GradCheckReport grad_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double h,
                           double tol, double floor = 1e-8);

}  // namespace uiim
