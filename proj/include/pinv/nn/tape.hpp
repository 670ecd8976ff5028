// Reverse-mode gradient tape over dense matrices.
//
// Every value is an Eigen::MatrixXd node. Ops append a node together with a
// closure that maps the upstream gradient onto the node's parents. Parameters
// are registered by address so gradients can be queried per parameter after
// backward().
#pragma once

#include "pinv/core.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace pinv::nn {

class Tape;

/// Misuse of the tape: unrecorded parameter, non-scalar loss, foreign Var.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// (tape, node output value, upstream gradient) -> accumulates into parents.
  using Backward = std::function<void(Tape&, const Matrix&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);

  /// Registers `param` as a differentiable leaf. Registering the same matrix
  /// twice returns the existing node.
  Var parameter(const Matrix& param);

  /// Appends an op node. The node requires a gradient iff any parent does.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1x1.
  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  const Matrix& value(Var v) const { return value(v.id()); }

  /// Gradient of the last backward() w.r.t. `v`; zeros if nothing reached it.
  Matrix grad(Var v) const;

  /// Gradient w.r.t. a registered parameter. Throws TapeError otherwise.
  Matrix grad(const Matrix& param) const;

  bool has_parameter(const Matrix& param) const { return params_.contains(&param); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, std::size_t> params_;
};

}  // namespace pinv::nn
