#include "lpnn/binarize.hpp"

#include <cmath>

namespace lpnn {

BinaryWeightState binarize_weights(const Tensor& master) {
  require(master.rank() >= 2, ErrorCategory::shape,
          "binarize_weights expects a filter tensor (rank >= 2), got " + master.shape_str());
  const int filters = master.dim(0);
  const int64_t per_filter = master.numel() / filters;
  BinaryWeightState state;
  state.master = master;
  state.binary = Tensor(master.shape());
  state.alpha.resize(static_cast<size_t>(filters));
  const float* src = master.data();
  float* bin = state.binary.data();
  for (int f = 0; f < filters; ++f) {
    const float* w = src + static_cast<int64_t>(f) * per_filter;
    float* b = bin + static_cast<int64_t>(f) * per_filter;
    double abs_sum = 0.0;
    for (int64_t i = 0; i < per_filter; ++i) {
      abs_sum += std::abs(static_cast<double>(w[i]));
      b[i] = (w[i] >= 0.0f) ? 1.0f : -1.0f;  // sign(0) = +1
    }
    state.alpha[static_cast<size_t>(f)] = static_cast<float>(abs_sum / static_cast<double>(per_filter));
  }
  return state;
}

Tensor binary_effective_weights(const BinaryWeightState& state) {
  Tensor eff(state.binary.shape());
  const int filters = eff.dim(0);
  const int64_t per_filter = eff.numel() / filters;
  const float* bin = state.binary.data();
  float* dst = eff.data();
  for (int f = 0; f < filters; ++f) {
    float a = state.alpha[static_cast<size_t>(f)];
    const float* b = bin + static_cast<int64_t>(f) * per_filter;
    float* o = dst + static_cast<int64_t>(f) * per_filter;
    for (int64_t i = 0; i < per_filter; ++i) o[i] = a * b[i];
  }
  return eff;
}

}  // namespace lpnn
