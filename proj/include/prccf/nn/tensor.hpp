#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace prccf::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& delta);
};

}  // namespace detail

// Reverse-mode autodiff over 2-D double matrices. A Tensor is a cheap handle;
// copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  // Mutating a value in place does not invalidate recorded graphs; only do it
  // on leaves between steps.
  Matrix& mutable_value() { return node_->value; }
  bool has_grad() const { return node_ && node_->grad.size() > 0; }
  const Matrix& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;

  // Seeds d(this)/d(this) = 1 for a 1x1 tensor and propagates to every leaf.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  // Builds an op result; records the graph only when grad mode is on and a
  // parent requires grad.
  static Tensor make(Matrix value, std::vector<Tensor> parents, std::function<void(detail::Node&)> backward);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace prccf::nn
