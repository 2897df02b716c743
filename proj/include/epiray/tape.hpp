#pragma once

#include <string>
#include <variant>
#include <vector>

#include "epiray/types.hpp"

namespace epiray::toydiff {

/// Reverse-mode tape over dense double matrices. Covers exactly the ops the
/// toy denoiser uses; every forward value is checked finite so a NaN aborts
/// with the op name. Parameters are bound to external storage and updated
/// in place by sgd_step.
class Tape {
 public:
  using ParamRef = std::variant<MatX*, RowVecX*>;

  int constant(MatX value);
  int param(MatX& storage);
  int param(RowVecX& storage);

  int matmul(int a, int b);
  int transpose(int a);
  int add(int a, int b);
  int sub(int a, int b);
  int scale(int a, double s);
  /// Broadcast-add a 1 x c node to every row of a.
  int add_rowvec(int a, int v);
  int hadamard(int a, int b);
  int gelu(int a);
  /// Row-wise layer norm with learnable 1 x c scale/shift nodes.
  int layer_norm(int x, int gamma, int beta, double eps = 1e-5);
  /// Row-wise softmax; masked entries get exactly zero weight. bits may be
  /// null for a dense softmax. Throws when a mask row is all-false.
  int masked_softmax(int logits, const MaskBits* bits);
  int vcat(int a, int b);
  int hcat(int a, int b);
  int cols(int a, Eigen::Index c0, Eigen::Index n);
  int rows(int a, Eigen::Index r0, Eigen::Index n);
  /// Mean of squared residuals against a constant target, scalar node.
  int mean_sq_error(int a, MatX target);

  const MatX& value(int node) const { return nodes_[node].value; }
  const MatX& grad(int node) const { return nodes_[node].grad; }
  double scalar(int node) const { return nodes_[node].value(0, 0); }

  /// Seeds d(loss)/d(loss) = 1 and runs all adjoints in reverse order.
  void backward(int loss_node);

  /// In-place gradient descent on every bound parameter.
  void sgd_step(double lr);

  const std::vector<std::pair<ParamRef, int>>& bound_params() const {
    return bound_;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    MatX value;
    MatX grad;
    std::function<void()> back;  // empty for leaves
  };

  int push(MatX value, std::function<void()> back, const char* op_name);
  MatX& grad_ref(int node) { return nodes_[node].grad; }

  std::vector<Node> nodes_;
  std::vector<std::pair<ParamRef, int>> bound_;
};

}  // namespace epiray::toydiff
