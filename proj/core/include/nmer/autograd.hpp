#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every value in the network is a 2-D matrix; batched
// activations are (rows = samples or sample*token, cols = features).

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace nmer {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace ag {

struct Node {
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
  template <typename Expr>
  void accumulate_block(Eigen::Index r, Eigen::Index c, const Expr& g) {
    ensure_grad();
    grad.block(r, c, g.rows(), g.cols()) += g;
  }
  void ensure_grad();
};

/// Handle to a node in the computation graph. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }

  void zero_grad() { node_->grad.resize(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf holding a trainable tensor.
Var parameter(Matrix value);
/// Leaf that never receives gradient.
Var constant(Matrix value);

/// Runs backpropagation from a 1x1 output, accumulating into every
/// reachable node with requires_grad.
void backward(const Var& root);

/// While alive on a thread, newly created nodes record no graph edges.
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

// Construction helper for op implementations.
Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

}  // namespace ag
}  // namespace nmer
