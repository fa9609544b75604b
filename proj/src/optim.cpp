#include "thpn/optim.hpp"

#include <cmath>

namespace thpn {

double clip_global_norm(const std::vector<Tensor>& params, double threshold) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > threshold && norm > 0.0) {
    const double s = threshold / norm;
    for (const auto& p : params) const_cast<Tensor&>(p).grad() *= s;
  }
  return norm;
}

void AdamState::init(const std::vector<Tensor>& params) {
  step_count = 0;
  first_moment.clear();
  second_moment.clear();
  for (const auto& p : params) {
    first_moment.push_back(Mat::Zero(p.value().rows(), p.value().cols()));
    second_moment.push_back(Mat::Zero(p.value().rows(), p.value().cols()));
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (state.first_moment.size() != params.size())
    throw DimensionError("adam_step: state not initialized for this parameter list");
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = params[i].grad();
    Mat& m = state.first_moment[i];
    Mat& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    const Mat m_hat = m / bc1;
    const Mat v_hat = v / bc2;
    params[i].value().array() -=
        state.learning_rate * m_hat.array() / (v_hat.array().sqrt() + state.epsilon);
  }
}

}  // namespace thpn
