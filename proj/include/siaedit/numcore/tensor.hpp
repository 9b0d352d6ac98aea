#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace siaedit::num {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Values = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::string shape_string(const Shape& shape);
Index shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Values value;
  Values grad;  // empty until first accumulation
  bool requires_grad = false;
  bool tracked = false;  // leaf with requires_grad, or output of a recorded op

  void accumulate(const Values& g);
  Values& grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles. Copies share storage; the value buffer is
/// treated as immutable once an op has consumed it, except for leaves updated
/// by an optimizer between tapes.
class Tensor {
 public:
  Tensor();

  static Tensor from(Shape shape, Values values, bool requires_grad = false);
  static Tensor from(Shape shape, const std::vector<double>& values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  Index numel() const { return node_->value.size(); }

  const Values& values() const { return node_->value; }
  // Only for leaves outside any live tape (parameter updates, finite differences).
  Values& mutable_values() { return node_->value; }
  double item() const;
  double at(std::initializer_list<Index> idx) const;

  ConstMatrixMap matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool tracked() const { return node_->tracked; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Values& grad() const { return node_->grad; }
  Tensor grad_tensor() const;
  void zero_grad();   // allocate (or reset) an all-zero accumulator
  void clear_grad();  // drop the accumulator entirely

  // Fresh leaf with copied values and no history.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape shape, Values values);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an untracked tensor from an op's computed values.
Tensor make_result(Shape shape, Values values);

/// Ordered log of executed differentiable ops. backward() replays adjoints in
/// exact reverse order of recording.
class Tape {
 public:
  using Adjoint = std::function<void(const Values& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& output, std::vector<Tensor> inputs, Adjoint adjoint);
  void backward(const Tensor& scalar_output);
  void clear();

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Entry indices in the order backward() last visited them.
  const std::vector<std::size_t>& last_replay_order() const { return replay_order_; }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    Adjoint adjoint;
  };
  std::vector<Entry> entries_;
  std::vector<std::size_t> replay_order_;
};

/// Makes a tape the recording target for ops on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on this thread (inference, finite differences).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Records `adjoint` on the active tape when any input is tracked; marks output tracked.
// Returns true when recorded.
bool record_if_tracked(Tensor& output, std::vector<Tensor> inputs, Tape::Adjoint adjoint);

}  // namespace siaedit::num
