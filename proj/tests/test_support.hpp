#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "thpn/rng.hpp"
#include "thpn/tensor.hpp"

namespace thpn::testing {

// Central finite differences against the autodiff gradient of a scalar loss.
// Rebuilds the graph per evaluation; `make_loss` must be deterministic.
// The denominator floor turns the check into an absolute one where the
// gradient sits below the FD cancellation noise (~eps * |loss| / h, i.e.
// around 1e-9 for unit-scale losses at h = 1e-6).
inline double max_rel_grad_error(std::vector<Tensor>& params,
                                 const std::function<Tensor()>& make_loss,
                                 double h = 1e-6, double denom_floor = 1e-3) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = make_loss();
  backward(loss);
  std::vector<Mat> analytic;
  for (auto& p : params) analytic.push_back(p.grad());
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (Eigen::Index i = 0; i < p.value().rows(); ++i)
      for (Eigen::Index j = 0; j < p.value().cols(); ++j) {
        const double orig = p.value()(i, j);
        p.value()(i, j) = orig + h;
        const double fp = make_loss().item();
        p.value()(i, j) = orig - h;
        const double fm = make_loss().item();
        p.value()(i, j) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic[pi](i, j);
        const double denom = std::max({std::abs(a), std::abs(fd), denom_floor});
        worst = std::max(worst, std::abs(a - fd) / denom);
      }
  }
  return worst;
}

inline Tensor random_tensor(const std::vector<int>& shape, RngState& rng, double s = 1.0) {
  Tensor t = Tensor::zeros(shape, true);
  for (Eigen::Index i = 0; i < t.value().rows(); ++i)
    for (Eigen::Index j = 0; j < t.value().cols(); ++j) t.value()(i, j) = rng.normal(0.0, s);
  return t;
}

}  // namespace thpn::testing
