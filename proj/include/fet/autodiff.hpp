#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "fet/tensor.hpp"

namespace fet {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return value().size(); }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool needs_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Records forward operations in execution order and replays them in reverse
/// to accumulate gradients. Single writer; one tape per thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(Precision precision = Precision::f64) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const { return precision_; }

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf bound to an externally owned tensor. Binding the same tensor twice
  // returns the same leaf.
  Var param(Tensor& tensor);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and sweeps every recorded op once in reverse.
  void backward(Var loss);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  // Gradient flowing into node `id`; empty if nothing reached it.
  const std::vector<double>& grad(std::uint32_t id) const { return nodes_[id].grad; }
  const std::vector<double>& grad(Var v) const { return grad(v.id()); }
  // Accumulator for an input's gradient, allocated on first use.
  std::vector<double>& grad_accum(std::uint32_t id);

  // Adds (scale * leaf grad) into each bound tensor's grad buffer.
  void accumulate_param_grads(double scale = 1.0);

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  friend class Var;
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var push(Tensor value, bool needs_grad, BackwardFn fn);

  Precision precision_;
  std::deque<Node> nodes_;  // stable addresses: values are handed out by reference
  std::unordered_map<const Tensor*, std::uint32_t> bound_;
  std::vector<std::pair<std::uint32_t, Tensor*>> params_;
  std::size_t backward_visits_ = 0;
  bool swept_ = false;
};

}  // namespace fet
