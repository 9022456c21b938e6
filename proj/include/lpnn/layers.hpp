#ifndef LPNN_LAYERS_HPP_
#define LPNN_LAYERS_HPP_

#include <string>
#include <vector>

#include "lpnn/binarize.hpp"
#include "lpnn/quantizer.hpp"
#include "lpnn/tensor.hpp"

namespace lpnn {

// Backward surrogates for the quantized forward activations. The ReLU-family
// modes (vanilla / clipped / log_tailed) pair with the half-wave quantizer;
// hard_tanh pairs with the sign activation.
enum class BackwardMode { vanilla, clipped, log_tailed, hard_tanh };

const char* to_string(BackwardMode mode);
BackwardMode backward_mode_from_string(const std::string& s);

// Convolution with binarized weights: conv2d(input, alpha*B). Bit-packed
// kernels realize the same product for quantized inputs (see bitkernels).
Tensor binary_conv2d(const Tensor& input, const BinaryWeightState& state, int stride,
                     int padding);

// Elementwise half-wave quantization of pre-activations.
Tensor hwgq_forward(const Tensor& pre_activations, const QuantizerSpec& spec);

// upstream * Q'(x) with the mode's surrogate derivative:
//   vanilla:    1 on x > 0, else 0
//   clipped:    1 on 0 < x <= q_m, else 0 (1 at q_m exactly)
//   log_tailed: 1 on 0 < x <= q_m, 1/(x - tau) beyond with tau = q_m - 1
// hard_tanh is rejected here; it belongs to sign_backward.
Tensor hwgq_backward(const Tensor& pre_activations, const Tensor& upstream_grad,
                     const QuantizerSpec& spec, BackwardMode mode);

// Elementwise +-1 with sign(0) = +1.
Tensor sign_forward(const Tensor& x);
// Hard-tanh surrogate: upstream passes iff |x| <= 1.
Tensor sign_backward(const Tensor& x, const Tensor& upstream_grad);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& upstream_grad);

// Per-channel batch normalization. Accepts NxC or NxCxHxW; channel = dim 1
// for rank 4, dim 1 (features) for rank 2, reducing over all other dims.
struct BatchNormState {
  Tensor gamma, beta;               // [C]
  Tensor running_mean, running_var; // [C]
  float epsilon = 1e-5f;
  float momentum = 0.9f;  // kept fraction of the old running statistic
};

BatchNormState make_batch_norm(int channels, float epsilon = 1e-5f, float momentum = 0.9f);

struct BatchNormCache {
  Tensor xhat;                 // normalized, pre-affine
  std::vector<float> inv_std;  // per channel
  int64_t count = 0;           // per-channel reduction count
  bool valid = false;
};

// Training mode normalizes by batch statistics (biased variance) and updates
// the running statistics; inference mode uses the running statistics.
// Training with a per-channel count < 2 is rejected.
Tensor batch_norm_forward(const Tensor& x, BatchNormState& state, bool training,
                          BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Tensor d_input, d_gamma, d_beta;
};

// Requires the cache captured by a training-mode forward.
BatchNormGrads batch_norm_backward(const Tensor& upstream_grad, const BatchNormState& state,
                                   const BatchNormCache& cache);

}  // namespace lpnn

#endif  // LPNN_LAYERS_HPP_
