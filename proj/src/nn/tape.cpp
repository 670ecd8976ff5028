#include "pinv/nn/tape.hpp"

#include <utility>

namespace pinv::nn {

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw TapeError("use of an unbound Var");
  return tape_->value(id_);
}

void Tape::check_owned(Var v) const {
  if (&v.tape() != this || v.id() >= nodes_.size()) {
    throw TapeError("Var does not belong to this tape");
  }
}

Var Tape::constant(Matrix value) {
  require_finite(value, "tape constant");
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Matrix& param) {
  if (auto it = params_.find(&param); it != params_.end()) return Var(this, it->second);
  require_finite(param, "parameter");
  nodes_.push_back(Node{param, {}, {}, true});
  params_.emplace(&param, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  require_finite(value, "tape op output");
  bool needs = false;
  for (const Var& p : parents) {
    check_owned(p);
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id()].value.size() != 1) throw TapeError("backward() needs a scalar loss");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.value, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(const Matrix& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) throw TapeError("parameter was not recorded on this tape");
  return grad(Var(const_cast<Tape*>(this), it->second));
}

}  // namespace pinv::nn
