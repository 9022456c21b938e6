#include "lpnn/layers.hpp"

#include <cmath>

#include "lpnn/ops.hpp"

namespace lpnn {

Tensor binary_conv2d(const Tensor& input, const BinaryWeightState& state, int stride,
                     int padding) {
  return conv2d(input, binary_effective_weights(state), stride, padding);
}

const char* to_string(BackwardMode mode) {
  switch (mode) {
    case BackwardMode::vanilla: return "vanilla";
    case BackwardMode::clipped: return "clipped";
    case BackwardMode::log_tailed: return "log_tailed";
    case BackwardMode::hard_tanh: return "hard_tanh";
  }
  return "?";
}

BackwardMode backward_mode_from_string(const std::string& s) {
  if (s == "vanilla") return BackwardMode::vanilla;
  if (s == "clipped") return BackwardMode::clipped;
  if (s == "log_tailed") return BackwardMode::log_tailed;
  if (s == "hard_tanh") return BackwardMode::hard_tanh;
  fail(ErrorCategory::config, "unknown backward mode: " + s);
}

Tensor hwgq_forward(const Tensor& pre_activations, const QuantizerSpec& spec) {
  Tensor out(pre_activations.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<float>(quantize(static_cast<double>(pre_activations[i]), spec));
  }
  return out;
}

Tensor hwgq_backward(const Tensor& pre_activations, const Tensor& upstream_grad,
                     const QuantizerSpec& spec, BackwardMode mode) {
  require(pre_activations.same_shape(upstream_grad), ErrorCategory::shape,
          "hwgq_backward shape mismatch: " + pre_activations.shape_str() + " vs " +
              upstream_grad.shape_str());
  require(mode != BackwardMode::hard_tanh, ErrorCategory::usage,
          "hard_tanh pairs with the sign activation; use sign_backward");
  const float q_max = static_cast<float>(spec.q_max());
  const double tau = spec.q_max() - 1.0;
  Tensor out(pre_activations.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    float x = pre_activations[i];
    double d;
    if (x <= 0.0f) {
      d = 0.0;
    } else if (mode == BackwardMode::vanilla || x <= q_max) {
      d = 1.0;
    } else if (mode == BackwardMode::clipped) {
      d = 0.0;
    } else {  // log_tailed beyond q_m
      d = 1.0 / (static_cast<double>(x) - tau);
    }
    out[i] = static_cast<float>(static_cast<double>(upstream_grad[i]) * d);
  }
  return out;
}

Tensor sign_forward(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] >= 0.0f ? 1.0f : -1.0f;
  return out;
}

Tensor sign_backward(const Tensor& x, const Tensor& upstream_grad) {
  require(x.same_shape(upstream_grad), ErrorCategory::shape,
          "sign_backward shape mismatch: " + x.shape_str() + " vs " + upstream_grad.shape_str());
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    out[i] = (std::abs(x[i]) <= 1.0f) ? upstream_grad[i] : 0.0f;
  }
  return out;
}

Tensor relu_forward(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream_grad) {
  require(x.same_shape(upstream_grad), ErrorCategory::shape, "relu_backward shape mismatch");
  Tensor out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] > 0.0f ? upstream_grad[i] : 0.0f;
  return out;
}

BatchNormState make_batch_norm(int channels, float epsilon, float momentum) {
  require(channels >= 1, ErrorCategory::shape, "batch norm needs >= 1 channel");
  BatchNormState s;
  s.gamma = Tensor::full({channels}, 1.0f);
  s.beta = Tensor::zeros({channels});
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0f);
  s.epsilon = epsilon;
  s.momentum = momentum;
  return s;
}

namespace {

struct ChannelLayout {
  int channels;
  int64_t outer;   // N
  int64_t inner;   // H*W (1 for rank 2)
  int64_t count;   // outer * inner, per-channel reduction size
};

ChannelLayout channel_layout(const Tensor& x) {
  require(x.rank() == 2 || x.rank() == 4, ErrorCategory::shape,
          "batch norm expects NxC or NxCxHxW, got " + x.shape_str());
  ChannelLayout l;
  l.outer = x.dim(0);
  l.channels = x.dim(1);
  l.inner = x.rank() == 4 ? static_cast<int64_t>(x.dim(2)) * x.dim(3) : 1;
  l.count = l.outer * l.inner;
  return l;
}

template <typename Fn>
void for_each_channel_value(const Tensor& x, const ChannelLayout& l, int c, Fn&& fn) {
  const int64_t stride = static_cast<int64_t>(l.channels) * l.inner;
  const float* base = x.data() + static_cast<int64_t>(c) * l.inner;
  for (int64_t n = 0; n < l.outer; ++n) {
    const float* p = base + n * stride;
    for (int64_t i = 0; i < l.inner; ++i) fn(n * stride + static_cast<int64_t>(c) * l.inner + i, p[i]);
  }
}

}  // namespace

Tensor batch_norm_forward(const Tensor& x, BatchNormState& state, bool training,
                          BatchNormCache* cache) {
  ChannelLayout l = channel_layout(x);
  require(l.channels == state.gamma.dim(0), ErrorCategory::shape,
          "batch norm channel mismatch: input " + x.shape_str() + " vs state " +
              state.gamma.shape_str());
  if (training) {
    require(l.count >= 2, ErrorCategory::usage,
            "batch norm training needs a per-channel batch of >= 2 values, got " +
                std::to_string(l.count));
  }
  Tensor out(x.shape());
  if (cache) {
    cache->xhat = Tensor(x.shape());
    cache->inv_std.assign(static_cast<size_t>(l.channels), 0.0f);
    cache->count = l.count;
    cache->valid = training;
  }
  for (int c = 0; c < l.channels; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for_each_channel_value(x, l, c, [&](int64_t, float v) { sum += v; });
      mean = sum / static_cast<double>(l.count);
      double sq = 0.0;
      for_each_channel_value(x, l, c, [&](int64_t, float v) {
        double d = v - mean;
        sq += d * d;
      });
      var = sq / static_cast<double>(l.count);  // biased, as used for normalization
      float m = state.momentum;
      state.running_mean[c] = m * state.running_mean[c] + (1.0f - m) * static_cast<float>(mean);
      state.running_var[c] = m * state.running_var[c] + (1.0f - m) * static_cast<float>(var);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    double inv_std = 1.0 / std::sqrt(var + static_cast<double>(state.epsilon));
    if (cache) cache->inv_std[static_cast<size_t>(c)] = static_cast<float>(inv_std);
    float g = state.gamma[c], b = state.beta[c];
    float* xhat = cache ? cache->xhat.data() : nullptr;
    float* o = out.data();
    for_each_channel_value(x, l, c, [&](int64_t idx, float v) {
      float h = static_cast<float>((static_cast<double>(v) - mean) * inv_std);
      if (xhat) xhat[idx] = h;
      o[idx] = g * h + b;
    });
  }
  return out;
}

BatchNormGrads batch_norm_backward(const Tensor& upstream_grad, const BatchNormState& state,
                                   const BatchNormCache& cache) {
  require(cache.valid, ErrorCategory::usage,
          "batch_norm_backward called without a training-mode forward cache");
  require(upstream_grad.same_shape(cache.xhat), ErrorCategory::shape,
          "batch_norm_backward shape mismatch");
  ChannelLayout l = channel_layout(upstream_grad);
  BatchNormGrads g;
  g.d_input = Tensor(upstream_grad.shape());
  g.d_gamma = Tensor::zeros({l.channels});
  g.d_beta = Tensor::zeros({l.channels});
  const double count = static_cast<double>(cache.count);
  for (int c = 0; c < l.channels; ++c) {
    double sum_up = 0.0, sum_up_xhat = 0.0;
    const float* xhat = cache.xhat.data();
    for_each_channel_value(upstream_grad, l, c, [&](int64_t idx, float up) {
      sum_up += up;
      sum_up_xhat += static_cast<double>(up) * xhat[idx];
    });
    g.d_beta[c] = static_cast<float>(sum_up);
    g.d_gamma[c] = static_cast<float>(sum_up_xhat);
    const double gamma = state.gamma[c];
    const double inv_std = cache.inv_std[static_cast<size_t>(c)];
    float* dx = g.d_input.data();
    for_each_channel_value(upstream_grad, l, c, [&](int64_t idx, float up) {
      double v = gamma * inv_std / count *
                 (count * up - sum_up - static_cast<double>(xhat[idx]) * sum_up_xhat);
      dx[idx] = static_cast<float>(v);
    });
  }
  return g;
}

}  // namespace lpnn
