#include "epiray/tape.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace epiray::toydiff {

namespace {

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad_scalar(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

}  // namespace

int Tape::push(MatX value, std::function<void()> back, const char* op_name) {
  if (!value.allFinite()) {
    throw std::runtime_error(std::string("tape: non-finite value in op ") +
                             op_name);
  }
  Node node;
  node.grad = MatX::Zero(value.rows(), value.cols());
  node.value = std::move(value);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(MatX value) {
  return push(std::move(value), {}, "constant");
}

int Tape::param(MatX& storage) {
  const int id = push(storage, {}, "param");
  bound_.emplace_back(&storage, id);
  return id;
}

int Tape::param(RowVecX& storage) {
  const int id = push(storage, {}, "param");
  bound_.emplace_back(&storage, id);
  return id;
}

int Tape::matmul(int a, int b) {
  if (nodes_[a].value.cols() != nodes_[b].value.rows()) {
    throw std::invalid_argument("tape matmul: inner dimensions differ");
  }
  MatX value = nodes_[a].value * nodes_[b].value;
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value), [this, a, b, out] {
    nodes_[a].grad.noalias() += nodes_[out].grad * nodes_[b].value.transpose();
    nodes_[b].grad.noalias() += nodes_[a].value.transpose() * nodes_[out].grad;
  }, "matmul");
}

int Tape::transpose(int a) {
  const int out = static_cast<int>(nodes_.size());
  return push(nodes_[a].value.transpose(), [this, a, out] {
    nodes_[a].grad += nodes_[out].grad.transpose();
  }, "transpose");
}

int Tape::add(int a, int b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols()) {
    throw std::invalid_argument("tape add: shape mismatch");
  }
  const int out = static_cast<int>(nodes_.size());
  return push(nodes_[a].value + nodes_[b].value, [this, a, b, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[b].grad += nodes_[out].grad;
  }, "add");
}

int Tape::sub(int a, int b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols()) {
    throw std::invalid_argument("tape sub: shape mismatch");
  }
  const int out = static_cast<int>(nodes_.size());
  return push(nodes_[a].value - nodes_[b].value, [this, a, b, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[b].grad -= nodes_[out].grad;
  }, "sub");
}

int Tape::scale(int a, double s) {
  const int out = static_cast<int>(nodes_.size());
  return push(nodes_[a].value * s, [this, a, s, out] {
    nodes_[a].grad += nodes_[out].grad * s;
  }, "scale");
}

int Tape::add_rowvec(int a, int v) {
  if (nodes_[v].value.rows() != 1 ||
      nodes_[v].value.cols() != nodes_[a].value.cols()) {
    throw std::invalid_argument("tape add_rowvec: expected 1 x cols vector");
  }
  MatX value = nodes_[a].value.rowwise() + nodes_[v].value.row(0);
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value), [this, a, v, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[v].grad += nodes_[out].grad.colwise().sum();
  }, "add_rowvec");
}

int Tape::hadamard(int a, int b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols()) {
    throw std::invalid_argument("tape hadamard: shape mismatch");
  }
  MatX value = nodes_[a].value.cwiseProduct(nodes_[b].value);
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value), [this, a, b, out] {
    nodes_[a].grad += nodes_[out].grad.cwiseProduct(nodes_[b].value);
    nodes_[b].grad += nodes_[out].grad.cwiseProduct(nodes_[a].value);
  }, "hadamard");
}

int Tape::gelu(int a) {
  MatX value = nodes_[a].value.unaryExpr(&gelu_scalar);
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value), [this, a, out] {
    nodes_[a].grad +=
        nodes_[out].grad.cwiseProduct(nodes_[a].value.unaryExpr(&gelu_grad_scalar));
  }, "gelu");
}

int Tape::layer_norm(int x, int gamma, int beta, double eps) {
  const MatX& xv = nodes_[x].value;
  const Eigen::Index c = xv.cols();
  if (nodes_[gamma].value.cols() != c || nodes_[beta].value.cols() != c) {
    throw std::invalid_argument("tape layer_norm: scale/shift width mismatch");
  }
  MatX normalized(xv.rows(), c);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var =
        (xv.row(r).array() - mean).square().sum() / static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (xv.row(r).array() - mean) * inv_std[r];
  }
  MatX value(xv.rows(), c);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    value.row(r) = (normalized.row(r).array() *
                        nodes_[gamma].value.row(0).array() +
                    nodes_[beta].value.row(0).array())
                       .matrix();
  }
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value),
              [this, x, gamma, beta, out, normalized, inv_std] {
                const MatX& dy = nodes_[out].grad;
                nodes_[beta].grad += dy.colwise().sum();
                nodes_[gamma].grad +=
                    dy.cwiseProduct(normalized).colwise().sum();
                for (Eigen::Index r = 0; r < dy.rows(); ++r) {
                  const Eigen::RowVectorXd g =
                      dy.row(r).cwiseProduct(nodes_[gamma].value.row(0));
                  const double mean_g = g.mean();
                  const double mean_gx =
                      g.cwiseProduct(normalized.row(r)).mean();
                  nodes_[x].grad.row(r) +=
                      inv_std[r] *
                      (g.array() - mean_g -
                       normalized.row(r).array() * mean_gx)
                          .matrix();
                }
              },
              "layer_norm");
}

int Tape::masked_softmax(int logits, const MaskBits* bits) {
  const MatX& lv = nodes_[logits].value;
  if (bits != nullptr &&
      (bits->rows() != lv.rows() || bits->cols() != lv.cols())) {
    throw std::invalid_argument("tape masked_softmax: mask shape mismatch");
  }
  MatX weights(lv.rows(), lv.cols());
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    double row_max = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Eigen::Index c = 0; c < lv.cols(); ++c) {
      if (bits == nullptr || (*bits)(r, c)) {
        any = true;
        row_max = std::max(row_max, lv(r, c));
      }
    }
    if (!any) {
      throw std::invalid_argument("tape masked_softmax: all-false mask row");
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < lv.cols(); ++c) {
      const bool on = bits == nullptr || (*bits)(r, c);
      weights(r, c) = on ? std::exp(lv(r, c) - row_max) : 0.0;
      sum += weights(r, c);
    }
    weights.row(r) /= sum;
  }
  const int out = static_cast<int>(nodes_.size());
  return push(weights, [this, logits, out] {
    const MatX& w = nodes_[out].value;
    const MatX& dw = nodes_[out].grad;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      const double dot = dw.row(r).dot(w.row(r));
      nodes_[logits].grad.row(r) +=
          (w.row(r).array() * (dw.row(r).array() - dot)).matrix();
    }
  }, "masked_softmax");
}

int Tape::vcat(int a, int b) {
  if (nodes_[a].value.cols() != nodes_[b].value.cols()) {
    throw std::invalid_argument("tape vcat: column mismatch");
  }
  MatX value(nodes_[a].value.rows() + nodes_[b].value.rows(),
             nodes_[a].value.cols());
  value << nodes_[a].value, nodes_[b].value;
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value), [this, a, b, out] {
    const Eigen::Index ra = nodes_[a].value.rows();
    nodes_[a].grad += nodes_[out].grad.topRows(ra);
    nodes_[b].grad += nodes_[out].grad.bottomRows(nodes_[b].value.rows());
  }, "vcat");
}

int Tape::hcat(int a, int b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows()) {
    throw std::invalid_argument("tape hcat: row mismatch");
  }
  MatX value(nodes_[a].value.rows(),
             nodes_[a].value.cols() + nodes_[b].value.cols());
  value << nodes_[a].value, nodes_[b].value;
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value), [this, a, b, out] {
    const Eigen::Index ca = nodes_[a].value.cols();
    nodes_[a].grad += nodes_[out].grad.leftCols(ca);
    nodes_[b].grad += nodes_[out].grad.rightCols(nodes_[b].value.cols());
  }, "hcat");
}

int Tape::cols(int a, Eigen::Index c0, Eigen::Index n) {
  const int out = static_cast<int>(nodes_.size());
  return push(nodes_[a].value.middleCols(c0, n), [this, a, c0, n, out] {
    nodes_[a].grad.middleCols(c0, n) += nodes_[out].grad;
  }, "cols");
}

int Tape::rows(int a, Eigen::Index r0, Eigen::Index n) {
  const int out = static_cast<int>(nodes_.size());
  return push(nodes_[a].value.middleRows(r0, n), [this, a, r0, n, out] {
    nodes_[a].grad.middleRows(r0, n) += nodes_[out].grad;
  }, "rows");
}

int Tape::mean_sq_error(int a, MatX target) {
  if (nodes_[a].value.rows() != target.rows() ||
      nodes_[a].value.cols() != target.cols()) {
    throw std::invalid_argument("tape mean_sq_error: shape mismatch");
  }
  const double n = static_cast<double>(target.size());
  MatX residual = nodes_[a].value - target;
  MatX value(1, 1);
  value(0, 0) = residual.squaredNorm() / n;
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(value),
              [this, a, out, residual = std::move(residual), n] {
                nodes_[a].grad +=
                    (2.0 / n) * nodes_[out].grad(0, 0) * residual;
              },
              "mean_sq_error");
}

void Tape::backward(int loss_node) {
  if (nodes_[loss_node].value.size() != 1) {
    throw std::invalid_argument("tape backward: loss must be scalar");
  }
  for (Node& node : nodes_) {
    node.grad.setZero();
  }
  nodes_[loss_node].grad(0, 0) = 1.0;
  for (int i = loss_node; i >= 0; --i) {
    if (nodes_[i].back) {
      nodes_[i].back();
    }
  }
}

void Tape::sgd_step(double lr) {
  for (const auto& [ref, id] : bound_) {
    const MatX& g = nodes_[id].grad;
    if (std::holds_alternative<MatX*>(ref)) {
      *std::get<MatX*>(ref) -= lr * g;
    } else {
      *std::get<RowVecX*>(ref) -= lr * g.row(0);
    }
  }
}

}  // namespace epiray::toydiff
