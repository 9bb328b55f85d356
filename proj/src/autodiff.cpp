#include "fet/autodiff.hpp"

namespace fet {

const Tensor& Var::value() const { return tape_->nodes_[id_].value; }
bool Var::needs_grad() const { return tape_->nodes_[id_].needs_grad; }

Var Tape::push(Tensor value, bool needs_grad, BackwardFn fn) {
  round_to(precision_, value.data);
  nodes_.push_back(Node{std::move(value), {}, needs_grad ? std::move(fn) : BackwardFn{}, needs_grad});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, {}); }

Var Tape::variable(Tensor value) { return push(std::move(value), true, {}); }

Var Tape::param(Tensor& tensor) {
  if (auto it = bound_.find(&tensor); it != bound_.end()) return Var(this, it->second);
  Tensor copy(tensor.shape, tensor.data);
  Var v = push(std::move(copy), true, {});
  bound_.emplace(&tensor, v.id());
  params_.emplace_back(v.id(), &tensor);
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.needs_grad();
  return push(std::move(value), needs, std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.needs_grad();
  return push(std::move(value), needs, std::move(backward));
}

std::vector<double>& Tape::grad_accum(std::uint32_t id) {
  auto& g = nodes_[id].grad;
  if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
  return g;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("backward: variable recorded on another tape");
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar output, got shape " + shape_str(loss.shape()));
  }
  if (swept_) throw ContractError("backward already ran on this tape");
  swept_ = true;
  grad_accum(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, static_cast<std::uint32_t>(i));
    ++backward_visits_;
  }
}

void Tape::accumulate_param_grads(double scale) {
  for (auto& [id, tensor] : params_) {
    const auto& g = nodes_[id].grad;
    if (g.empty()) {
      tensor->ensure_grad();
      continue;
    }
    auto& dst = tensor->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
  }
}

}  // namespace fet
