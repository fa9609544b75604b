#pragma once

#include <vector>

#include "thpn/tensor.hpp"

namespace thpn {

// If the global L2 norm of the gradients exceeds the threshold, scales every
// gradient by threshold/norm. Returns the pre-clip norm.
double clip_global_norm(const std::vector<Tensor>& params, double threshold);

struct AdamState {
  int step_count = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Mat> first_moment;
  std::vector<Mat> second_moment;

  void init(const std::vector<Tensor>& params);
};

// Bias-corrected Adam update in place; reads each parameter's grad slot.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace thpn
