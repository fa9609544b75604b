#include "thpn/init.hpp"

#include <Eigen/QR>

namespace thpn {

Tensor init_zeros(const std::vector<int>& shape) { return Tensor::zeros(shape, true); }

Tensor init_normal(const std::vector<int>& shape, double mean, double stddev, RngState& rng) {
  Tensor t = Tensor::zeros(shape, true);
  for (Eigen::Index i = 0; i < t.value().rows(); ++i)
    for (Eigen::Index j = 0; j < t.value().cols(); ++j)
      t.value()(i, j) = rng.normal(mean, stddev);
  return t;
}

namespace {

Mat orthogonal_mat(Eigen::Index rows, Eigen::Index cols, RngState& rng) {
  const bool tall = rows >= cols;
  const Eigen::Index m = tall ? rows : cols;
  const Eigen::Index n = tall ? cols : rows;
  Mat a(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = rng.normal(0.0, 1.0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, n);
  Eigen::MatrixXd r = qr.matrixQR().topRows(n).template triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return tall ? Mat(q) : Mat(q.transpose());
}

}  // namespace

Tensor init_orthogonal(const std::vector<int>& shape, RngState& rng) {
  if (shape.size() != 2)
    throw DimensionError("init_orthogonal: expected rank-2 shape, got " + shape_str(shape));
  return Tensor::from_mat(orthogonal_mat(shape[0], shape[1], rng), shape, true);
}

}  // namespace thpn
