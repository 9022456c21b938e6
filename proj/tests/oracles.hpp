// Test-only reference implementations. These deliberately avoid the library's
// code paths: convolution and matmul are naive nested loops with double
// accumulation, the Lloyd oracle is a prefix-sum k-means with random
// multi-start, and derivatives come from central differences of the defining
// piecewise primitives.
#ifndef LPNN_TESTS_ORACLES_HPP_
#define LPNN_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lpnn/tensor.hpp"

namespace oracles {

using lpnn::Rng;
using lpnn::Tensor;

inline bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

inline bool tensor_close(const Tensor& a, const Tensor& b, double tol) {
  if (!(a.shape() == b.shape())) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (!close(a[i], b[i], tol)) return false;
  }
  return true;
}

inline double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = std::abs(static_cast<double>(a[i]) - b[i]);
    worst = std::max(worst, d / std::max({1.0, std::abs(static_cast<double>(a[i])),
                                          std::abs(static_cast<double>(b[i]))}));
  }
  return worst;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<float>(rng.gaussian() * scale);
  }
  return t;
}

// Direct 6-loop cross-correlation, double accumulators.
inline Tensor naive_conv2d(const Tensor& input, const Tensor& filters, int stride, int pad) {
  int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  int f = filters.dim(0), kh = filters.dim(2), kw = filters.dim(3);
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (w + 2 * pad - kw) / stride + 1;
  Tensor out({n, f, ho, wo});
  for (int in = 0; in < n; ++in)
    for (int of = 0; of < f; ++of)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int iy = oy * stride - pad + ky;
                int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<double>(input.at4(in, ic, iy, ix)) *
                       filters.at4(of, ic, ky, kx);
              }
          out.at4(in, of, oy, ox) = static_cast<float>(acc);
        }
  return out;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += static_cast<double>(a.at2(i, t)) * b.at2(t, j);
      out.at2(i, j) = static_cast<float>(acc);
    }
  return out;
}

// Per-window scan oracle for max pooling.
inline Tensor naive_max_pool(const Tensor& input, int k, int stride) {
  int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  int ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  Tensor out({n, c, ho, wo});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          float best = input.at4(in, ic, oy * stride, ox * stride);
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
              best = std::max(best, input.at4(in, ic, oy * stride + ky, ox * stride + kx));
          out.at4(in, ic, oy, ox) = best;
        }
  return out;
}

// --------------------------------------------------------------------------
// Lloyd / uniform quantizer oracles (positive half, prefix-sum route)

struct QuantOracle {
  std::vector<double> levels;  // sorted
  double delta = 0.0;          // uniform oracle only
  double mse = 0.0;
};

struct PrefixSums {
  std::vector<double> xs;   // sorted positive samples
  std::vector<double> px;   // prefix sums of x
  std::vector<double> px2;  // prefix sums of x^2
};

inline PrefixSums make_prefix(const Tensor& samples) {
  PrefixSums p;
  for (int64_t i = 0; i < samples.numel(); ++i) {
    if (samples[i] > 0.0f) p.xs.push_back(samples[i]);
  }
  std::sort(p.xs.begin(), p.xs.end());
  p.px.assign(p.xs.size() + 1, 0.0);
  p.px2.assign(p.xs.size() + 1, 0.0);
  for (size_t i = 0; i < p.xs.size(); ++i) {
    p.px[i + 1] = p.px[i] + p.xs[i];
    p.px2[i + 1] = p.px2[i] + p.xs[i] * p.xs[i];
  }
  return p;
}

// MSE of arbitrary levels with nearest-level (midpoint-boundary) cells.
inline double prefix_mse(const PrefixSums& p, const std::vector<double>& levels) {
  const size_t n = p.xs.size();
  double sse = 0.0;
  size_t lo = 0;
  for (size_t i = 0; i < levels.size(); ++i) {
    size_t hi = n;
    if (i + 1 < levels.size()) {
      double boundary = 0.5 * (levels[i] + levels[i + 1]);
      hi = static_cast<size_t>(
          std::upper_bound(p.xs.begin(), p.xs.end(), boundary) - p.xs.begin());
    }
    double cnt = static_cast<double>(hi - lo);
    double sum = p.px[hi] - p.px[lo];
    double sum2 = p.px2[hi] - p.px2[lo];
    sse += sum2 - 2.0 * levels[i] * sum + cnt * levels[i] * levels[i];
    lo = hi;
  }
  return sse / static_cast<double>(n);
}

// One Lloyd run from a given init; converges on level movement.
inline QuantOracle lloyd_from(const PrefixSums& p, std::vector<double> levels, int iters = 500) {
  const size_t n = p.xs.size();
  for (int it = 0; it < iters; ++it) {
    double moved = 0.0;
    size_t lo = 0;
    for (size_t i = 0; i < levels.size(); ++i) {
      size_t hi = n;
      if (i + 1 < levels.size()) {
        double boundary = 0.5 * (levels[i] + levels[i + 1]);
        hi = static_cast<size_t>(
            std::upper_bound(p.xs.begin(), p.xs.end(), boundary) - p.xs.begin());
      }
      if (hi > lo) {
        double centroid = (p.px[hi] - p.px[lo]) / static_cast<double>(hi - lo);
        moved = std::max(moved, std::abs(centroid - levels[i]));
        levels[i] = centroid;
      }
      lo = hi;
    }
    std::sort(levels.begin(), levels.end());
    if (moved < 1e-12) break;
  }
  QuantOracle o;
  o.levels = levels;
  o.mse = prefix_mse(p, levels);
  return o;
}

// Brute-force multi-start Lloyd: random sample subsets as initializations.
inline QuantOracle lloyd_multistart(const Tensor& samples, int m, int starts, uint64_t seed) {
  PrefixSums p = make_prefix(samples);
  QuantOracle best;
  best.mse = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (int s = 0; s < starts; ++s) {
    std::vector<double> init;
    while (static_cast<int>(init.size()) < m) {
      double candidate = p.xs[static_cast<size_t>(rng.uniform_int(
          static_cast<int64_t>(p.xs.size())))];
      if (std::find(init.begin(), init.end(), candidate) == init.end()) {
        init.push_back(candidate);
      }
    }
    std::sort(init.begin(), init.end());
    QuantOracle o = lloyd_from(p, std::move(init));
    if (o.mse < best.mse) best = o;
  }
  return best;
}

// Exact MSE of the uniform quantizer with step d (thresholds (i-1/2)d).
inline double uniform_mse(const PrefixSums& p, double d, int m) {
  const size_t n = p.xs.size();
  double sse = 0.0;
  size_t lo = 0;
  for (int i = 1; i <= m; ++i) {
    size_t hi = n;
    if (i < m) {
      double boundary = (static_cast<double>(i) + 0.5) * d;
      hi = static_cast<size_t>(
          std::upper_bound(p.xs.begin(), p.xs.end(), boundary) - p.xs.begin());
    }
    double q = static_cast<double>(i) * d;
    double cnt = static_cast<double>(hi - lo);
    double sum = p.px[hi] - p.px[lo];
    double sum2 = p.px2[hi] - p.px2[lo];
    sse += sum2 - 2.0 * q * sum + cnt * q * q;
    lo = hi;
  }
  return sse / static_cast<double>(n);
}

// Dense grid scan plus local refinement over the step size.
inline QuantOracle uniform_grid_search(const Tensor& samples, int m) {
  PrefixSums p = make_prefix(samples);
  double hi_delta = 4.0 * p.xs.back() / static_cast<double>(m);
  QuantOracle best;
  best.mse = std::numeric_limits<double>::infinity();
  const int grid = 4000;
  for (int g = 1; g <= grid; ++g) {
    double d = hi_delta * static_cast<double>(g) / grid;
    double mse = uniform_mse(p, d, m);
    if (mse < best.mse) {
      best.mse = mse;
      best.delta = d;
    }
  }
  // refine around the best grid point
  double lo = best.delta - hi_delta / grid, hi = best.delta + hi_delta / grid;
  for (int it = 0; it < 200; ++it) {
    double d1 = lo + (hi - lo) / 3.0, d2 = hi - (hi - lo) / 3.0;
    if (uniform_mse(p, d1, m) < uniform_mse(p, d2, m)) {
      hi = d2;
    } else {
      lo = d1;
    }
  }
  double d = 0.5 * (lo + hi);
  double mse = uniform_mse(p, d, m);
  if (mse < best.mse) {
    best.mse = mse;
    best.delta = d;
  }
  best.levels.clear();
  for (int i = 1; i <= m; ++i) best.levels.push_back(static_cast<double>(i) * best.delta);
  return best;
}

// --------------------------------------------------------------------------
// Backward-approximator primitives (the functions whose derivatives the
// implementation must match) and central differences.

inline double primitive_vanilla(double x) { return x > 0.0 ? x : 0.0; }

inline double primitive_clipped(double x, double qm) {
  if (x > qm) return qm;
  return x > 0.0 ? x : 0.0;
}

inline double primitive_log_tailed(double x, double qm) {
  if (x > qm) return qm + std::log(x - (qm - 1.0));
  return x > 0.0 ? x : 0.0;
}

inline double primitive_hard_tanh(double x) { return std::clamp(x, -1.0, 1.0); }

template <typename F>
double central_diff(F&& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracles

#endif  // LPNN_TESTS_ORACLES_HPP_
