#include "qvad/tape.h"

#include "qvad/error.h"

namespace qvad {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::make(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return make(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  return make(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  if (record_ && p.trainable) {
    n.param = &p;
    n.requires_grad = true;
  }
  return make(std::move(n));
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id());
  return n.external ? *n.external : n.value;
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.param) return n.param->grad.empty() ? nullptr : &n.param->grad;
  return n.grad.empty() ? nullptr : &n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id());
  Tensor& g = n.param ? n.param->grad : n.grad;
  if (g.empty()) g = Tensor(value(v).shape());
  return g;
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (Var in : inputs) {
      if (nodes_.at(in.id()).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return make(std::move(n));
}

Var Tape::push(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (Var in : inputs) {
      if (nodes_.at(in.id()).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return make(std::move(n));
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ShapeError("backward: variable belongs to another tape");
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_string(value(loss).shape()));
  }
  if (!nodes_.at(loss.id()).requires_grad) return;
  grad_buffer(loss)[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // The closure may allocate grads of earlier nodes; nodes_ is not resized
    // during backward so the reference stays valid.
    n.backward(*this, n.grad);
  }
}

}  // namespace qvad
