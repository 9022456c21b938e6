#ifndef LPNN_BINARIZE_HPP_
#define LPNN_BINARIZE_HPP_

#include <vector>

#include "lpnn/tensor.hpp"

namespace lpnn {

// Binary approximation W ~ alpha*B of a filter bank, one scale per output
// filter: B = sign(W) with sign(0) = +1, alpha = mean |W| over the filter
// slice. This is the L2-optimal rank-1 binary factorization of each slice.
struct BinaryWeightState {
  Tensor master;              // full-precision weights, dim 0 = output filters
  Tensor binary;              // same shape, elements in {-1, +1}
  std::vector<float> alpha;   // one non-negative scale per output filter
};

// Accepts any rank >= 2 weight tensor (conv filters FxCxKhxKw or fully
// connected OutxIn); slices are taken along dim 0.
BinaryWeightState binarize_weights(const Tensor& master);

// alpha_f * B_f, the effective weights the float path convolves with.
Tensor binary_effective_weights(const BinaryWeightState& state);

}  // namespace lpnn

#endif  // LPNN_BINARIZE_HPP_
