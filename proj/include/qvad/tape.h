#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "qvad/tensor.h"

namespace qvad {

// A learnable tensor with its gradient accumulator. Gradients from every tape
// that references the parameter are summed into `grad` until cleared.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
// so reverse insertion order is a reverse topological order and backward()
// visits each node exactly once. A tape is confined to one thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  // With record=false no backward closures are stored (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf that receives a gradient but is not tied to a Parameter.
  Var leaf(Tensor value);
  // References the parameter's storage without copying. Frozen parameters
  // (trainable == false) behave as constants.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  // Accumulated gradient of a node, or nullptr if nothing flowed into it.
  const Tensor* grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and runs all recorded backward rules.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  // Op authoring interface.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Tensor value, const std::vector<Var>& inputs, Backward backward);
  // Zero-initialised on first access; for parameter leaves this is the
  // parameter's own gradient buffer.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var make(Node node);

  std::vector<Node> nodes_;
  bool record_;
};

}  // namespace qvad
