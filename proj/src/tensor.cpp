#include "thpn/tensor.hpp"

#include <unordered_set>

namespace thpn {

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

Eigen::Index shape_numel(const std::vector<int>& shape) {
  Eigen::Index n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::pair<Eigen::Index, Eigen::Index> storage_dims(const std::vector<int>& shape) {
  if (shape.size() > 2) throw DimensionError("tensors of rank > 2 are not supported");
  if (shape.empty()) return {1, 1};
  for (int d : shape)
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
  if (shape.size() == 1) return {shape[0], 1};
  return {shape[0], shape[1]};
}

}  // namespace

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  auto [r, c] = storage_dims(shape);
  auto node = std::make_shared<TensorNode>();
  node->value = Mat::Zero(r, c);
  node->shape = shape;
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::from_values(const std::vector<int>& shape, const std::vector<double>& values,
                           bool requires_grad) {
  if (shape_numel(shape) != static_cast<Eigen::Index>(values.size()))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  Tensor t = zeros(shape, requires_grad);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < t.value().rows(); ++i)
    for (Eigen::Index j = 0; j < t.value().cols(); ++j) t.value()(i, j) = values[k++];
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_values({1}, {v}, requires_grad);
}

Tensor Tensor::from_mat(Mat m, const std::vector<int>& shape, bool requires_grad) {
  auto [r, c] = storage_dims(shape);
  if (m.rows() != r || m.cols() != c)
    throw DimensionError("matrix storage does not match shape " + shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->value = std::move(m);
  node->shape = shape;
  node->requires_grad = requires_grad;
  return Tensor(node);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw DimensionError("backward() requires a scalar loss");

  // Iterative post-order DFS; reverse of the order is a valid backprop order.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
  // Consume the graph: interior nodes drop their edges and closures so the
  // whole structure frees without deep recursive destructor chains.
  for (TensorNode* n : order) {
    n->parents.clear();
    n->backprop = nullptr;
  }
}

}  // namespace thpn
