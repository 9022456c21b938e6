#ifndef LPNN_OPS_HPP_
#define LPNN_OPS_HPP_

#include <cstdint>
#include <vector>

#include "lpnn/tensor.hpp"

namespace lpnn {

// Reference full-precision operations. conv2d is cross-correlation (the
// deep-learning convention, no filter flip). All functions are pure and
// single-threaded; reduction order is fixed, so results are deterministic.

// input NxCxHxW, filters FxCxKhxKw -> NxFxHoxWo with
// Ho = (H + 2*padding - Kh)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& filters, int stride, int padding);

struct Conv2dGrads {
  Tensor d_input;
  Tensor d_filters;
};
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& filters, int stride,
                            int padding, const Tensor& d_output);

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T: [m x k] * [n x k] -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a^T * b: [k x m] * [k x n] -> [m x n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Per-window maximum. Backward routes the gradient to the argmax element,
// first index winning ties; pass `argmax` to capture flat input indices.
Tensor max_pool2d(const Tensor& input, int k, int stride,
                  std::vector<int64_t>* argmax = nullptr);
Tensor max_pool2d_backward(const std::vector<int>& input_shape,
                           const std::vector<int64_t>& argmax, const Tensor& d_output);

// n i.i.d. standard-normal draws (Box-Muller over the seeded stream).
Tensor gaussian_samples(Rng& rng, int64_t n);

// im2row lowering: one row per output position, columns ordered C,Kh,Kw
// (contiguous channel x spatial patch, the axis bitkernels packs along).
// Result shape {N*Ho*Wo, C*Kh*Kw}; out-of-bounds positions are zero.
Tensor im2row(const Tensor& input, int kh, int kw, int stride, int padding);
// Scatter-add inverse of im2row.
Tensor row2im(const Tensor& rows, const std::vector<int>& input_shape, int kh, int kw,
              int stride, int padding);

// Layout shims between the GEMM view [N*Ho*Wo, F] and NCHW [N, F, Ho, Wo].
Tensor rows_to_nchw(const Tensor& rows, int n, int f, int ho, int wo);
Tensor nchw_to_rows(const Tensor& t);

struct ConvGeometry {
  int n, c, h, w, f, kh, kw, ho, wo;
};
ConvGeometry conv_geometry(const Tensor& input, const Tensor& filters, int stride, int padding);

}  // namespace lpnn

#endif  // LPNN_OPS_HPP_
