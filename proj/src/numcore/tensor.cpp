#include "siaedit/numcore/tensor.hpp"

#include "siaedit/errors.hpp"

#include <sstream>

namespace siaedit::num {

namespace {
thread_local Tape* current_tape = nullptr;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

namespace detail {

void Node::accumulate(const Values& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Values& Node::grad_buffer() {
  if (grad.size() == 0) grad = Values::Zero(value.size());
  return grad;
}

}  // namespace detail

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {
  node_->shape = {};
  node_->value = Values::Zero(1);
}

Tensor Tensor::from(Shape shape, Values values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->tracked = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, const std::vector<double>& values, bool requires_grad) {
  Values v = Eigen::Map<const Values>(values.data(), static_cast<Index>(values.size()));
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = shape_numel(shape);
  return from(std::move(shape), Values::Zero(n), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = shape_numel(shape);
  return from(std::move(shape), Values::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{}, Values::Constant(1, value), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
  if (idx.size() != rank()) throw DimensionError("index rank does not match " + shape_string(shape()));
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    const Index extent = node_->shape[axis++];
    if (i < 0 || i >= extent) throw RangeError("index out of range for " + shape_string(shape()));
    flat = flat * extent + i;
  }
  return node_->value[flat];
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() != 2) throw DimensionError("matrix view needs rank 2, got " + shape_string(shape()));
  return ConstMatrixMap(node_->value.data(), node_->shape[0], node_->shape[1]);
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor::from(shape(), node_->grad);
}

void Tensor::zero_grad() { node_->grad = Values::Zero(node_->value.size()); }

void Tensor::clear_grad() { node_->grad.resize(0); }

Tensor Tensor::detach() const { return Tensor::from(shape(), values(), false); }

Tensor Tensor::clone(bool requires_grad) const { return Tensor::from(shape(), values(), requires_grad); }

Tensor make_result(Shape shape, Values values) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, Adjoint adjoint) {
  Entry e;
  e.output = output.node();
  e.inputs.reserve(inputs.size());
  for (const auto& t : inputs) e.inputs.push_back(t.node());
  e.adjoint = std::move(adjoint);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& scalar_output) {
  if (scalar_output.numel() != 1) {
    throw ContractError("backward() needs a scalar, got shape " + shape_string(scalar_output.shape()));
  }
  if (!scalar_output.tracked()) throw ContractError("backward() on a tensor with no recorded history");

  // Intermediate accumulators from a previous replay must not leak into this one.
  for (auto& e : entries_) e.output->grad.resize(0);
  scalar_output.node()->grad = Values::Ones(1);

  replay_order_.clear();
  for (std::size_t i = entries_.size(); i-- > 0;) {
    Entry& e = entries_[i];
    if (e.output->grad.size() == 0) continue;
    replay_order_.push_back(i);
    e.adjoint(e.output->grad);
  }
  for (auto& e : entries_) {
    for (auto& in : e.inputs) {
      if (in->requires_grad) in->grad_buffer();
    }
  }
}

void Tape::clear() {
  entries_.clear();
  entries_.shrink_to_fit();
  replay_order_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

Tape* active_tape() { return current_tape; }

bool record_if_tracked(Tensor& output, std::vector<Tensor> inputs, Tape::Adjoint adjoint) {
  Tape* tape = current_tape;
  if (!tape) return false;
  bool any = false;
  for (const auto& t : inputs) any = any || t.tracked();
  if (!any) return false;
  output.node()->tracked = true;
  tape->record(output, std::move(inputs), std::move(adjoint));
  return true;
}

}  // namespace siaedit::num
