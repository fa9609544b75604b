#pragma once

#include "thpn/rng.hpp"
#include "thpn/tensor.hpp"

namespace thpn {

Tensor init_zeros(const std::vector<int>& shape);

Tensor init_normal(const std::vector<int>& shape, double mean, double stddev, RngState& rng);

// Orthogonal columns for m >= n (Q^T Q = I), orthogonal rows otherwise.
// QR of a standard-normal matrix with the R diagonal sign-corrected, so the
// result is deterministic given the rng state.
Tensor init_orthogonal(const std::vector<int>& shape, RngState& rng);

}  // namespace thpn
