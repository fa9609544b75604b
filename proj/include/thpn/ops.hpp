#pragma once

#include <cstdint>
#include <vector>

#include "thpn/rng.hpp"
#include "thpn/tensor.hpp"

namespace thpn {

// Differentiable free functions over tensors. Rank-1 tensors are column
// vectors; parameter matrices follow the row-vector convention, i.e. a
// (k x n) matrix maps a length-k vector to length n via vecmat.

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise product
Tensor scale(const Tensor& x, double c);
Tensor affine(const Tensor& x, double a, double b);  // a*x + b elementwise
Tensor smul(const Tensor& x, const Tensor& s);       // x * scalar tensor

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);  // (m x k) * (k x n)
Tensor matvec(const Tensor& a, const Tensor& x);  // (m x k) * (k) -> (m)
Tensor vecmat(const Tensor& x, const Tensor& a);  // (k) * (k x n) -> (n)
Tensor dot(const Tensor& a, const Tensor& b);     // (n) . (n) -> scalar

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int start, int len);  // rank-1
Tensor sum(const Tensor& x);

// Softmax over a rank-1 tensor with hard masking: masked slots (keep[i] == 0)
// come out exactly zero, the kept slots are a stabilized softmax. Throws if
// every position is masked.
Tensor masked_softmax(const Tensor& logits, const std::vector<std::uint8_t>& keep);
Tensor softmax(const Tensor& logits);

// Zeroes masked slots of a probability vector and renormalizes the kept mass.
Tensor renorm_masked(const Tensor& probs, const std::vector<std::uint8_t>& keep);

Tensor embedding_lookup(const Tensor& table, int index);
// One output row per bag: the sum of the table rows listed in the bag.
Tensor embed_bag(const Tensor& table, const std::vector<std::vector<int>>& bags);
Tensor embed_mean(const Tensor& table, const std::vector<int>& indices);

Tensor dropout(const Tensor& x, double rate, bool training, RngState& rng);

// -log(max(probs[index], 1e-12))
Tensor pick_nll(const Tensor& probs, int index);

}  // namespace thpn
