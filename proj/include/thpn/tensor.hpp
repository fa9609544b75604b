#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "thpn/error.hpp"

namespace thpn {

// Row-major so the flat view of a tensor is its row-major payload.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One node of the dynamic reverse-mode tape. Rank-1 tensors of length n are
// stored as n x 1 matrices, scalars as 1 x 1 with shape {1}.
struct TensorNode {
  Mat value;
  Mat grad;  // sized lazily; empty until first touched
  std::vector<int> shape;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // accumulates self.grad into parents

  void ensure_grad() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
  }
};

std::string shape_str(const std::vector<int>& shape);

// Value-semantic handle to a tape node. Copies share the node, which is what
// ties the computation graph together.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
  static Tensor from_values(const std::vector<int>& shape, const std::vector<double>& values,
                            bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_mat(Mat m, const std::vector<int>& shape, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Eigen::Index numel() const { return node_->value.size(); }

  Mat& value() { return node_->value; }
  const Mat& value() const { return node_->value; }

  Mat& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const Mat& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor with " + std::to_string(numel()) + " elements");
    return node_->value(0, 0);
  }
  double at(int i) const { return node_->value(i, 0); }
  double at(int i, int j) const { return node_->value(i, j); }

  void zero_grad() {
    node_->ensure_grad();
    node_->grad.setZero();
  }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Populates grads of every requires_grad tensor reachable from `loss`
// (which must hold exactly one element). The traversed graph is consumed:
// interior edges are released so intermediates free immediately.
void backward(const Tensor& loss);

}  // namespace thpn
