#include "thpn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace thpn {

namespace {

constexpr double kMaskLogit = -1e30;
constexpr double kProbFloor = 1e-12;

using NodePtr = std::shared_ptr<TensorNode>;

Tensor make_op(Mat value, std::vector<int> shape, std::vector<NodePtr> parents,
               std::function<void(TensorNode&)> backprop) {
  auto n = std::make_shared<TensorNode>();
  n->value = std::move(value);
  n->shape = std::move(shape);
  for (const auto& p : parents)
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor(n);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

void check_rank1(const Tensor& x, const char* op) {
  if (x.rank() != 1)
    throw DimensionError(std::string(op) + ": expected rank-1 tensor, got " +
                         shape_str(x.shape()));
}

void accumulate(TensorNode& parent, const Mat& g) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  parent.grad.noalias() += g;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), a.shape(), {a.node(), b.node()},
                 [](TensorNode& self) {
                   accumulate(*self.parents[0], self.grad);
                   accumulate(*self.parents[1], self.grad);
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Mat av = a.value(), bv = b.value();
  return make_op(av.cwiseProduct(bv), a.shape(), {a.node(), b.node()},
                 [av, bv](TensorNode& self) {
                   accumulate(*self.parents[0], self.grad.cwiseProduct(bv));
                   accumulate(*self.parents[1], self.grad.cwiseProduct(av));
                 });
}

Tensor scale(const Tensor& x, double c) {
  return make_op(x.value() * c, x.shape(), {x.node()}, [c](TensorNode& self) {
    accumulate(*self.parents[0], self.grad * c);
  });
}

Tensor affine(const Tensor& x, double a, double b) {
  return make_op((x.value().array() * a + b).matrix(), x.shape(), {x.node()},
                 [a](TensorNode& self) { accumulate(*self.parents[0], self.grad * a); });
}

Tensor smul(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("smul: scalar operand has " +
                                           std::to_string(s.numel()) + " elements");
  Mat xv = x.value();
  const double sv = s.value()(0, 0);
  return make_op(xv * sv, x.shape(), {x.node(), s.node()}, [xv, sv](TensorNode& self) {
    accumulate(*self.parents[0], self.grad * sv);
    if (self.parents[1]->requires_grad) {
      Mat g(1, 1);
      g(0, 0) = self.grad.cwiseProduct(xv).sum();
      accumulate(*self.parents[1], g);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  Mat y = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return make_op(y, x.shape(), {x.node()}, [y](TensorNode& self) {
    accumulate(*self.parents[0],
               self.grad.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Tensor tanh(const Tensor& x) {
  Mat y = x.value().array().tanh().matrix();
  return make_op(y, x.shape(), {x.node()}, [y](TensorNode& self) {
    accumulate(*self.parents[0],
               self.grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  Mat av = a.value(), bv = b.value();
  return make_op(av * bv, {a.shape()[0], b.shape()[1]}, {a.node(), b.node()},
                 [av, bv](TensorNode& self) {
                   if (self.parents[0]->requires_grad)
                     accumulate(*self.parents[0], self.grad * bv.transpose());
                   if (self.parents[1]->requires_grad)
                     accumulate(*self.parents[1], av.transpose() * self.grad);
                 });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  check_rank1(x, "matvec");
  if (a.rank() != 2 || a.shape()[1] != x.shape()[0])
    throw DimensionError("matvec: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(x.shape()));
  Mat av = a.value(), xv = x.value();
  return make_op(av * xv, {a.shape()[0]}, {a.node(), x.node()},
                 [av, xv](TensorNode& self) {
                   if (self.parents[0]->requires_grad)
                     accumulate(*self.parents[0], self.grad * xv.transpose());
                   if (self.parents[1]->requires_grad)
                     accumulate(*self.parents[1], av.transpose() * self.grad);
                 });
}

Tensor vecmat(const Tensor& x, const Tensor& a) {
  check_rank1(x, "vecmat");
  if (a.rank() != 2 || a.shape()[0] != x.shape()[0])
    throw DimensionError("vecmat: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(a.shape()));
  Mat av = a.value(), xv = x.value();
  return make_op(av.transpose() * xv, {a.shape()[1]}, {x.node(), a.node()},
                 [av, xv](TensorNode& self) {
                   if (self.parents[0]->requires_grad)
                     accumulate(*self.parents[0], av * self.grad);
                   if (self.parents[1]->requires_grad)
                     accumulate(*self.parents[1], xv * self.grad.transpose());
                 });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  check_rank1(a, "dot");
  check_same_shape(a, b, "dot");
  Mat av = a.value(), bv = b.value();
  Mat out(1, 1);
  out(0, 0) = av.col(0).dot(bv.col(0));
  return make_op(out, {1}, {a.node(), b.node()}, [av, bv](TensorNode& self) {
    const double g = self.grad(0, 0);
    accumulate(*self.parents[0], (bv * g).eval());
    accumulate(*self.parents[1], (av * g).eval());
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no tensors given");
  const int rank = parts[0].rank();
  if (rank == 1) {
    if (axis != 0) throw DimensionError("concat: rank-1 tensors concatenate on axis 0");
    Eigen::Index total = 0;
    for (const auto& p : parts) {
      check_rank1(p, "concat");
      total += p.numel();
    }
    Mat out(total, 1);
    std::vector<NodePtr> parents;
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      out.block(off, 0, p.numel(), 1) = p.value();
      offsets.push_back(off);
      off += p.numel();
      parents.push_back(p.node());
    }
    return make_op(std::move(out), {static_cast<int>(total)}, std::move(parents),
                   [offsets](TensorNode& self) {
                     for (std::size_t i = 0; i < self.parents.size(); ++i) {
                       auto& p = *self.parents[i];
                       accumulate(p, self.grad.block(offsets[i], 0, p.value.rows(), 1));
                     }
                   });
  }
  if (rank != 2 || (axis != 0 && axis != 1))
    throw DimensionError("concat: unsupported rank/axis");
  Eigen::Index rows = parts[0].value().rows(), cols = parts[0].value().cols();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2) throw DimensionError("concat: mixed ranks");
    if (axis == 0 && p.value().cols() != cols)
      throw DimensionError("concat: column mismatch");
    if (axis == 1 && p.value().rows() != rows)
      throw DimensionError("concat: row mismatch");
    total += (axis == 0) ? p.value().rows() : p.value().cols();
  }
  Mat out = (axis == 0) ? Mat(total, cols) : Mat(rows, total);
  std::vector<NodePtr> parents;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    if (axis == 0)
      out.block(off, 0, p.value().rows(), cols) = p.value();
    else
      out.block(0, off, rows, p.value().cols()) = p.value();
    offsets.push_back(off);
    off += (axis == 0) ? p.value().rows() : p.value().cols();
    parents.push_back(p.node());
  }
  std::vector<int> shape = (axis == 0)
                               ? std::vector<int>{static_cast<int>(total), static_cast<int>(cols)}
                               : std::vector<int>{static_cast<int>(rows), static_cast<int>(total)};
  return make_op(std::move(out), std::move(shape), std::move(parents),
                 [offsets, axis](TensorNode& self) {
                   for (std::size_t i = 0; i < self.parents.size(); ++i) {
                     auto& p = *self.parents[i];
                     if (axis == 0)
                       accumulate(p, self.grad.block(offsets[i], 0, p.value.rows(),
                                                     p.value.cols()));
                     else
                       accumulate(p, self.grad.block(0, offsets[i], p.value.rows(),
                                                     p.value.cols()));
                   }
                 });
}

Tensor slice(const Tensor& x, int start, int len) {
  check_rank1(x, "slice");
  if (start < 0 || len <= 0 || start + len > x.shape()[0])
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x.shape()));
  return make_op(x.value().block(start, 0, len, 1), {len}, {x.node()},
                 [start, len](TensorNode& self) {
                   auto& p = *self.parents[0];
                   p.ensure_grad();
                   p.grad.block(start, 0, len, 1) += self.grad;
                 });
}

Tensor sum(const Tensor& x) {
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  return make_op(out, {1}, {x.node()}, [](TensorNode& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    p.grad.array() += self.grad(0, 0);
  });
}

Tensor masked_softmax(const Tensor& logits, const std::vector<std::uint8_t>& keep) {
  check_rank1(logits, "masked_softmax");
  const Eigen::Index n = logits.numel();
  if (static_cast<Eigen::Index>(keep.size()) != n)
    throw DimensionError("masked_softmax: mask length " + std::to_string(keep.size()) +
                         " vs logits " + shape_str(logits.shape()));
  bool any = false;
  for (auto k : keep) any = any || (k != 0);
  if (!any) throw DimensionError("masked_softmax: all positions masked");

  Mat z = logits.value();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!keep[i]) z(i, 0) = kMaskLogit;
  const double m = z.maxCoeff();
  Mat e = (z.array() - m).exp().matrix();
  Mat p = e / e.sum();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!keep[i]) p(i, 0) = 0.0;

  return make_op(p, logits.shape(), {logits.node()}, [p, keep](TensorNode& self) {
    const double gp = self.grad.cwiseProduct(p).sum();
    Mat dx = p.cwiseProduct((self.grad.array() - gp).matrix());
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      if (!keep[i]) dx(i, 0) = 0.0;
    accumulate(*self.parents[0], dx);
  });
}

Tensor softmax(const Tensor& logits) {
  return masked_softmax(logits, std::vector<std::uint8_t>(logits.numel(), 1));
}

Tensor renorm_masked(const Tensor& probs, const std::vector<std::uint8_t>& keep) {
  check_rank1(probs, "renorm_masked");
  const Eigen::Index n = probs.numel();
  if (static_cast<Eigen::Index>(keep.size()) != n)
    throw DimensionError("renorm_masked: mask length mismatch");
  Mat pv = probs.value();
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (keep[i]) s += pv(i, 0);
  if (s <= 0.0) throw DimensionError("renorm_masked: no probability mass on kept slots");
  Mat out = Mat::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i)
    if (keep[i]) out(i, 0) = pv(i, 0) / s;

  return make_op(out, probs.shape(), {probs.node()}, [out, keep, s](TensorNode& self) {
    const double go = self.grad.cwiseProduct(out).sum();
    Mat dx = Mat::Zero(out.rows(), 1);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      if (keep[i]) dx(i, 0) = (self.grad(i, 0) - go) / s;
    accumulate(*self.parents[0], dx);
  });
}

Tensor embedding_lookup(const Tensor& table, int index) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be rank-2");
  const int v = table.shape()[0];
  if (index < 0 || index >= v)
    throw DimensionError("embedding_lookup: index " + std::to_string(index) +
                         " out of range for table with " + std::to_string(v) + " rows");
  return make_op(table.value().row(index).transpose(), {table.shape()[1]}, {table.node()},
                 [index](TensorNode& self) {
                   auto& p = *self.parents[0];
                   if (!p.requires_grad) return;
                   p.ensure_grad();
                   p.grad.row(index) += self.grad.transpose();
                 });
}

Tensor embed_bag(const Tensor& table, const std::vector<std::vector<int>>& bags) {
  if (table.rank() != 2) throw DimensionError("embed_bag: table must be rank-2");
  const int v = table.shape()[0], d = table.shape()[1];
  Mat out = Mat::Zero(static_cast<Eigen::Index>(bags.size()), d);
  for (std::size_t b = 0; b < bags.size(); ++b)
    for (int idx : bags[b]) {
      if (idx < 0 || idx >= v)
        throw DimensionError("embed_bag: index " + std::to_string(idx) +
                             " out of range for table with " + std::to_string(v) + " rows");
      out.row(b) += table.value().row(idx);
    }
  return make_op(std::move(out), {static_cast<int>(bags.size()), d}, {table.node()},
                 [bags](TensorNode& self) {
                   auto& p = *self.parents[0];
                   if (!p.requires_grad) return;
                   p.ensure_grad();
                   for (std::size_t b = 0; b < bags.size(); ++b)
                     for (int idx : bags[b]) p.grad.row(idx) += self.grad.row(b);
                 });
}

Tensor embed_mean(const Tensor& table, const std::vector<int>& indices) {
  if (indices.empty()) throw DimensionError("embed_mean: no indices");
  Tensor bag = embed_bag(table, {indices});
  const int d = table.shape()[1];
  Mat v = bag.value().row(0).transpose() / static_cast<double>(indices.size());
  const double inv = 1.0 / static_cast<double>(indices.size());
  return make_op(std::move(v), {d}, {bag.node()}, [inv](TensorNode& self) {
    accumulate(*self.parents[0], (self.grad.transpose() * inv).eval());
  });
}

Tensor dropout(const Tensor& x, double rate, bool training, RngState& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Mat mask(x.value().rows(), x.value().cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = (rng.uniform() < rate) ? 0.0 : keep_scale;
  return make_op(x.value().cwiseProduct(mask), x.shape(), {x.node()},
                 [mask](TensorNode& self) {
                   accumulate(*self.parents[0], self.grad.cwiseProduct(mask));
                 });
}

Tensor pick_nll(const Tensor& probs, int index) {
  check_rank1(probs, "pick_nll");
  if (index < 0 || index >= probs.shape()[0])
    throw DimensionError("pick_nll: index " + std::to_string(index) + " out of range for " +
                         shape_str(probs.shape()));
  const double p = probs.value()(index, 0);
  Mat out(1, 1);
  out(0, 0) = -std::log(std::max(p, kProbFloor));
  return make_op(out, {1}, {probs.node()}, [index, p](TensorNode& self) {
    if (p <= kProbFloor) return;  // flat region of the floor
    auto& parent = *self.parents[0];
    parent.ensure_grad();
    parent.grad(index, 0) += -self.grad(0, 0) / p;
  });
}

}  // namespace thpn
