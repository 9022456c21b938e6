#include "lpnn/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>

namespace lpnn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

MapConst as_matrix(const Tensor& t, int64_t rows, int64_t cols) {
  return MapConst(t.data(), rows, cols);
}

}  // namespace

ConvGeometry conv_geometry(const Tensor& input, const Tensor& filters, int stride, int padding) {
  require(input.rank() == 4, ErrorCategory::shape,
          "conv2d input must be NxCxHxW, got " + input.shape_str());
  require(filters.rank() == 4, ErrorCategory::shape,
          "conv2d filters must be FxCxKhxKw, got " + filters.shape_str());
  require(stride >= 1, ErrorCategory::shape, "conv2d stride must be >= 1");
  require(padding >= 0, ErrorCategory::shape, "conv2d padding must be >= 0");
  ConvGeometry g;
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.f = filters.dim(0);
  g.kh = filters.dim(2);
  g.kw = filters.dim(3);
  require(filters.dim(1) == g.c, ErrorCategory::shape,
          "conv2d channel mismatch: input " + input.shape_str() + " vs filters " + filters.shape_str());
  int eh = g.h + 2 * padding - g.kh;
  int ew = g.w + 2 * padding - g.kw;
  require(eh >= 0 && ew >= 0, ErrorCategory::shape,
          "conv2d kernel larger than padded input: input " + input.shape_str() +
              " vs filters " + filters.shape_str());
  g.ho = eh / stride + 1;
  g.wo = ew / stride + 1;
  return g;
}

Tensor im2row(const Tensor& input, int kh, int kw, int stride, int padding) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  const int cols = c * kh * kw;
  Tensor rows({n * ho * wo, cols});
  float* out = rows.data();
  const float* src = input.data();
  int64_t r = 0;
  for (int in = 0; in < n; ++in) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++r) {
        float* dst = out + r * cols;
        for (int ic = 0; ic < c; ++ic) {
          const float* plane = src + (static_cast<int64_t>(in) * c + ic) * h * w;
          for (int ky = 0; ky < kh; ++ky) {
            int iy = oy * stride - padding + ky;
            for (int kx = 0; kx < kw; ++kx, ++dst) {
              int ix = ox * stride - padding + kx;
              *dst = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                         ? plane[static_cast<int64_t>(iy) * w + ix]
                         : 0.0f;
            }
          }
        }
      }
    }
  }
  return rows;
}

Tensor row2im(const Tensor& rows, const std::vector<int>& input_shape, int kh, int kw,
              int stride, int padding) {
  const int n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  const int cols = c * kh * kw;
  Tensor image(input_shape);
  float* dst_base = image.data();
  const float* src = rows.data();
  int64_t r = 0;
  for (int in = 0; in < n; ++in) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++r) {
        const float* patch = src + r * cols;
        for (int ic = 0; ic < c; ++ic) {
          float* plane = dst_base + (static_cast<int64_t>(in) * c + ic) * h * w;
          for (int ky = 0; ky < kh; ++ky) {
            int iy = oy * stride - padding + ky;
            for (int kx = 0; kx < kw; ++kx, ++patch) {
              int ix = ox * stride - padding + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                plane[static_cast<int64_t>(iy) * w + ix] += *patch;
              }
            }
          }
        }
      }
    }
  }
  return image;
}

Tensor rows_to_nchw(const Tensor& rows, int n, int f, int ho, int wo) {
  Tensor out({n, f, ho, wo});
  const float* src = rows.data();
  float* dst = out.data();
  const int64_t hw = static_cast<int64_t>(ho) * wo;
  for (int in = 0; in < n; ++in) {
    for (int64_t p = 0; p < hw; ++p) {
      const float* row = src + (in * hw + p) * f;
      for (int of = 0; of < f; ++of) {
        dst[(static_cast<int64_t>(in) * f + of) * hw + p] = row[of];
      }
    }
  }
  return out;
}

Tensor nchw_to_rows(const Tensor& t) {
  const int n = t.dim(0), f = t.dim(1), ho = t.dim(2), wo = t.dim(3);
  Tensor rows({n * ho * wo, f});
  const float* src = t.data();
  float* dst = rows.data();
  const int64_t hw = static_cast<int64_t>(ho) * wo;
  for (int in = 0; in < n; ++in) {
    for (int64_t p = 0; p < hw; ++p) {
      float* row = dst + (in * hw + p) * f;
      for (int of = 0; of < f; ++of) {
        row[of] = src[(static_cast<int64_t>(in) * f + of) * hw + p];
      }
    }
  }
  return rows;
}

Tensor conv2d(const Tensor& input, const Tensor& filters, int stride, int padding) {
  ConvGeometry g = conv_geometry(input, filters, stride, padding);
  Tensor patches = im2row(input, g.kh, g.kw, stride, padding);
  const int cols = g.c * g.kh * g.kw;
  Tensor gemm({g.n * g.ho * g.wo, g.f});
  MapMat out(gemm.data(), gemm.dim(0), g.f);
  out.noalias() = as_matrix(patches, patches.dim(0), cols) *
                  as_matrix(filters, g.f, cols).transpose();
  return rows_to_nchw(gemm, g.n, g.f, g.ho, g.wo);
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& filters, int stride,
                            int padding, const Tensor& d_output) {
  ConvGeometry g = conv_geometry(input, filters, stride, padding);
  require(d_output.rank() == 4 && d_output.dim(0) == g.n && d_output.dim(1) == g.f &&
              d_output.dim(2) == g.ho && d_output.dim(3) == g.wo,
          ErrorCategory::shape, "conv2d_backward: d_output shape " + d_output.shape_str() +
                                    " does not match forward geometry");
  const int cols = g.c * g.kh * g.kw;
  Tensor patches = im2row(input, g.kh, g.kw, stride, padding);
  Tensor d_rowsview = nchw_to_rows(d_output);  // [N*Ho*Wo, F]

  Conv2dGrads grads;
  grads.d_filters = Tensor({g.f, g.c, g.kh, g.kw});
  MapMat dw(grads.d_filters.data(), g.f, cols);
  dw.noalias() = as_matrix(d_rowsview, d_rowsview.dim(0), g.f).transpose() *
                 as_matrix(patches, patches.dim(0), cols);

  Tensor d_patches({patches.dim(0), cols});
  MapMat dp(d_patches.data(), d_patches.dim(0), cols);
  dp.noalias() = as_matrix(d_rowsview, d_rowsview.dim(0), g.f) *
                 as_matrix(filters, g.f, cols);
  grads.d_input = row2im(d_patches, input.shape(), g.kh, g.kw, stride, padding);
  return grads;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorCategory::shape, "matmul expects rank-2 tensors");
  require(a.dim(1) == b.dim(0), ErrorCategory::shape,
          "matmul dimension mismatch: " + a.shape_str() + " * " + b.shape_str());
  Tensor out({a.dim(0), b.dim(1)});
  MapMat(out.data(), a.dim(0), b.dim(1)).noalias() =
      as_matrix(a, a.dim(0), a.dim(1)) * as_matrix(b, b.dim(0), b.dim(1));
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1), ErrorCategory::shape,
          "matmul_nt dimension mismatch: " + a.shape_str() + " * " + b.shape_str() + "^T");
  Tensor out({a.dim(0), b.dim(0)});
  MapMat(out.data(), a.dim(0), b.dim(0)).noalias() =
      as_matrix(a, a.dim(0), a.dim(1)) * as_matrix(b, b.dim(0), b.dim(1)).transpose();
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), ErrorCategory::shape,
          "matmul_tn dimension mismatch: " + a.shape_str() + "^T * " + b.shape_str());
  Tensor out({a.dim(1), b.dim(1)});
  MapMat(out.data(), a.dim(1), b.dim(1)).noalias() =
      as_matrix(a, a.dim(0), a.dim(1)).transpose() * as_matrix(b, b.dim(0), b.dim(1));
  return out;
}

Tensor max_pool2d(const Tensor& input, int k, int stride, std::vector<int64_t>* argmax) {
  require(input.rank() == 4, ErrorCategory::shape,
          "max_pool2d input must be NxCxHxW, got " + input.shape_str());
  require(k >= 1, ErrorCategory::shape, "max_pool2d window must be >= 1");
  require(stride >= 1, ErrorCategory::shape, "max_pool2d stride must be >= 1");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(k <= h && k <= w, ErrorCategory::shape,
          "max_pool2d window " + std::to_string(k) + " larger than input " + input.shape_str());
  const int ho = (h - k) / stride + 1;
  const int wo = (w - k) / stride + 1;
  Tensor out({n, c, ho, wo});
  if (argmax) argmax->assign(static_cast<size_t>(out.numel()), -1);
  const float* src = input.data();
  float* dst = out.data();
  int64_t o = 0;
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      const float* plane = src + (static_cast<int64_t>(in) * c + ic) * h * w;
      const int64_t plane_off = (static_cast<int64_t>(in) * c + ic) * h * w;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          int64_t best_idx = -1;
          for (int ky = 0; ky < k; ++ky) {
            int iy = oy * stride + ky;
            for (int kx = 0; kx < k; ++kx) {
              int ix = ox * stride + kx;
              float v = plane[static_cast<int64_t>(iy) * w + ix];
              if (v > best) {  // strict: first index wins ties
                best = v;
                best_idx = plane_off + static_cast<int64_t>(iy) * w + ix;
              }
            }
          }
          dst[o] = best;
          if (argmax) (*argmax)[static_cast<size_t>(o)] = best_idx;
        }
      }
    }
  }
  return out;
}

Tensor max_pool2d_backward(const std::vector<int>& input_shape,
                           const std::vector<int64_t>& argmax, const Tensor& d_output) {
  require(static_cast<int64_t>(argmax.size()) == d_output.numel(), ErrorCategory::shape,
          "max_pool2d_backward: argmax/d_output size mismatch");
  Tensor d_in(input_shape);
  for (int64_t i = 0; i < d_output.numel(); ++i) {
    d_in[argmax[static_cast<size_t>(i)]] += d_output[i];
  }
  return d_in;
}

Tensor gaussian_samples(Rng& rng, int64_t n) {
  require(n >= 1, ErrorCategory::usage, "gaussian_samples needs n >= 1");
  Tensor t({static_cast<int>(n)});
  for (int64_t i = 0; i < n; ++i) t[i] = static_cast<float>(rng.gaussian());
  return t;
}

}  // namespace lpnn
