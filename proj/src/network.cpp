#include "lpnn/network.hpp"

#include <cmath>

#include "json.hpp"

namespace lpnn {

namespace {

std::string layer_label(size_t index, const LayerSpec& l) {
  return "layer " + std::to_string(index) + " (" + l.type + ")";
}

Tensor he_init(std::vector<int> shape, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<float>(rng.gaussian() * std_dev);
  }
  return t;
}

void add_bias_rows(Tensor& rows, const Tensor& bias) {
  const int64_t n = rows.dim(0);
  const int f = rows.dim(1);
  float* p = rows.data();
  for (int64_t r = 0; r < n; ++r) {
    for (int c = 0; c < f; ++c) p[r * f + c] += bias[c];
  }
}

}  // namespace

NetworkSpec network_spec_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, std::string("network spec JSON parse error: ") + e.what());
  }
  NetworkSpec spec;
  try {
    spec.name = j.value("name", std::string("net"));
    const auto& in = j.at("input");
    require(in.is_array() && in.size() == 3, ErrorCategory::config,
            "network.input must be [channels, height, width]");
    spec.in_c = in[0].get<int>();
    spec.in_h = in[1].get<int>();
    spec.in_w = in[2].get<int>();
    spec.classes = j.at("classes").get<int>();
    spec.reorder_pooling = j.value("reorder_pooling", true);
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.type = lj.at("type").get<std::string>();
      l.out = lj.value("out", 0);
      l.kernel = lj.value("kernel", 0);
      l.stride = lj.value("stride", 1);
      l.pad = lj.value("pad", 0);
      l.weights = lj.value("weights", std::string("full"));
      l.activation = lj.value("activation", std::string("none"));
      l.norm = lj.value("norm", false);
      l.pool = lj.value("pool", 0);
      l.pool_stride = lj.value("pool_stride", l.pool);
      l.bias = lj.value("bias", l.weights != "binary");
      l.rate = lj.value("rate", 0.0);
      spec.layers.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::config, std::string("network spec field error: ") + e.what());
  }
  validate_network_spec(spec);
  return spec;
}

std::string network_spec_to_json_text(const NetworkSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["input"] = {spec.in_c, spec.in_h, spec.in_w};
  j["classes"] = spec.classes;
  j["reorder_pooling"] = spec.reorder_pooling;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json lj;
    lj["type"] = l.type;
    if (l.type == "dropout") {
      lj["rate"] = l.rate;
    } else {
      lj["out"] = l.out;
      if (l.type == "conv") {
        lj["kernel"] = l.kernel;
        lj["stride"] = l.stride;
        lj["pad"] = l.pad;
      }
      lj["weights"] = l.weights;
      lj["activation"] = l.activation;
      lj["norm"] = l.norm;
      if (l.pool > 0) {
        lj["pool"] = l.pool;
        lj["pool_stride"] = l.pool_stride;
      }
      lj["bias"] = l.bias;
    }
    j["layers"].push_back(lj);
  }
  return j.dump(2);
}

void validate_network_spec(const NetworkSpec& spec) {
  require(spec.in_c >= 1 && spec.in_h >= 1 && spec.in_w >= 1, ErrorCategory::config,
          "network input extents must be positive");
  require(spec.classes >= 2, ErrorCategory::config, "network needs >= 2 classes");
  require(!spec.layers.empty(), ErrorCategory::config, "network has no layers");

  int learnable_first = -1, learnable_last = -1;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.type == "conv" || l.type == "fc") {
      if (learnable_first < 0) learnable_first = static_cast<int>(i);
      learnable_last = static_cast<int>(i);
    } else if (l.type != "dropout") {
      fail(ErrorCategory::config, layer_label(i, l) + ": unknown layer type");
    }
  }
  require(learnable_first >= 0, ErrorCategory::config, "network has no learnable layer");

  int c = spec.in_c, h = spec.in_h, w = spec.in_w;
  bool flat = false;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const std::string label = layer_label(i, l);
    if (l.type == "dropout") {
      require(l.rate > 0.0 && l.rate < 1.0, ErrorCategory::config,
              label + ": rate must be in (0,1)");
      continue;
    }
    require(l.weights == "full" || l.weights == "binary", ErrorCategory::config,
            label + ": weights must be full|binary");
    require(l.activation == "none" || l.activation == "relu" || l.activation == "sign" ||
                l.activation == "hwgq",
            ErrorCategory::config, label + ": activation must be none|relu|sign|hwgq");
    require(l.out >= 1, ErrorCategory::config, label + ": out must be >= 1");
    if (l.weights == "binary") {
      require(!l.bias, ErrorCategory::config,
              label + ": binary-weight layers carry no bias term");
    }
    if (static_cast<int>(i) == learnable_first || static_cast<int>(i) == learnable_last) {
      require(l.weights == "full", ErrorCategory::config,
              label + ": first and last learnable layers must be full precision");
    }
    if (static_cast<int>(i) == learnable_last) {
      require(l.activation == "none", ErrorCategory::config,
              label + ": final layer must emit raw logits (activation none)");
      require(l.pool == 0, ErrorCategory::config, label + ": final layer cannot pool");
    }
    if (l.type == "conv") {
      require(!flat, ErrorCategory::config, label + ": conv after flattening fc");
      require(l.kernel >= 1, ErrorCategory::config, label + ": kernel must be >= 1");
      require(l.stride >= 1 && l.pad >= 0, ErrorCategory::config,
              label + ": stride must be >= 1 and pad >= 0");
      int nh = (h + 2 * l.pad - l.kernel) / l.stride + 1;
      int nw = (w + 2 * l.pad - l.kernel) / l.stride + 1;
      require(h + 2 * l.pad >= l.kernel && w + 2 * l.pad >= l.kernel && nh >= 1 && nw >= 1,
              ErrorCategory::config,
              label + ": kernel " + std::to_string(l.kernel) + " does not fit input " +
                  std::to_string(h) + "x" + std::to_string(w));
      c = l.out;
      h = nh;
      w = nw;
      if (l.pool > 0) {
        int ps = l.pool_stride > 0 ? l.pool_stride : l.pool;
        require(l.pool <= h && l.pool <= w, ErrorCategory::config,
                label + ": pool window " + std::to_string(l.pool) + " larger than " +
                    std::to_string(h) + "x" + std::to_string(w));
        h = (h - l.pool) / ps + 1;
        w = (w - l.pool) / ps + 1;
      }
    } else {  // fc
      require(l.pool == 0, ErrorCategory::config, label + ": fc layers cannot pool");
      flat = true;
      c = l.out;
      h = 1;
      w = 1;
    }
  }
  const auto& last = spec.layers[static_cast<size_t>(learnable_last)];
  require(last.out == spec.classes, ErrorCategory::config,
          layer_label(static_cast<size_t>(learnable_last), last) +
              ": final layer out " + std::to_string(last.out) + " must equal classes " +
              std::to_string(spec.classes));
}

// ---------------------------------------------------------------------------
// ConvLayer

ConvLayer::ConvLayer(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad,
                     bool binary, bool bias, Rng& init)
    : Layer(std::move(name)), stride_(stride), pad_(pad), binary_(binary), has_bias_(bias) {
  int64_t fan_in = static_cast<int64_t>(in_ch) * kernel * kernel;
  weights_ = he_init({out_ch, in_ch, kernel, kernel}, fan_in, init);
  d_weights_ = Tensor(weights_.shape());
  if (has_bias_) {
    bias_ = Tensor::zeros({out_ch});
    d_bias_ = Tensor(bias_.shape());
  }
}

Tensor ConvLayer::forward(const Tensor& x, bool training, uint64_t) {
  in_shape_ = x.shape();
  if (binary_) {
    bin_state_ = binarize_weights(weights_);
    if (!training && packed_on_ && packed_spec_ &&
        (packed_spec_->uniform || packed_spec_->m() == 1)) {
      return binary_conv2d_packed(x, bin_state_, *packed_spec_, stride_, pad_);
    }
  }
  Tensor eff = binary_ ? binary_effective_weights(bin_state_) : weights_;
  ConvGeometry g = conv_geometry(x, eff, stride_, pad_);
  patches_ = im2row(x, g.kh, g.kw, stride_, pad_);
  Tensor eff2d = eff.reshaped({g.f, g.c * g.kh * g.kw});
  Tensor rows = matmul_nt(patches_, eff2d);
  if (has_bias_) add_bias_rows(rows, bias_);
  return rows_to_nchw(rows, g.n, g.f, g.ho, g.wo);
}

Tensor ConvLayer::backward(const Tensor& upstream) {
  const int f = weights_.dim(0);
  const int cols = weights_.dim(1) * weights_.dim(2) * weights_.dim(3);
  Tensor d_rows = nchw_to_rows(upstream);
  // Gradient w.r.t. the effective (possibly binarized) weights flows straight
  // through to the masters.
  Tensor d_eff = matmul_tn(d_rows, patches_);
  float* dw = d_weights_.data();
  const float* de = d_eff.data();
  for (int64_t i = 0; i < d_weights_.numel(); ++i) dw[i] += de[i];
  if (has_bias_) {
    const int64_t n = d_rows.dim(0);
    for (int64_t r = 0; r < n; ++r) {
      for (int of = 0; of < f; ++of) d_bias_[of] += d_rows[r * f + of];
    }
  }
  Tensor eff = binary_ ? binary_effective_weights(bin_state_) : weights_;
  Tensor d_patches = matmul(d_rows, eff.reshaped({f, cols}));
  return row2im(d_patches, in_shape_, weights_.dim(2), weights_.dim(3), stride_, pad_);
}

void ConvLayer::collect_params(std::vector<Param>& out) {
  out.push_back({name_ + ".weight", &weights_, &d_weights_, true});
  if (has_bias_) out.push_back({name_ + ".bias", &bias_, &d_bias_, true});
}

void ConvLayer::collect_state(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".weight", &weights_});
  if (has_bias_) out.push_back({name_ + ".bias", &bias_});
}

// ---------------------------------------------------------------------------
// FcLayer

FcLayer::FcLayer(std::string name, int in_features, int out_features, bool binary, bool bias,
                 Rng& init)
    : Layer(std::move(name)), binary_(binary), has_bias_(bias) {
  weights_ = he_init({out_features, in_features}, in_features, init);
  d_weights_ = Tensor(weights_.shape());
  if (has_bias_) {
    bias_ = Tensor::zeros({out_features});
    d_bias_ = Tensor(bias_.shape());
  }
}

Tensor FcLayer::forward(const Tensor& x, bool, uint64_t) {
  in_shape_ = x.shape();
  const int n = x.dim(0);
  const int in_features = static_cast<int>(x.numel() / n);
  require(in_features == weights_.dim(1), ErrorCategory::shape,
          name_ + ": input features " + std::to_string(in_features) + " do not match weights " +
              weights_.shape_str());
  flat_input_ = x.reshaped({n, in_features});
  if (binary_) bin_state_ = binarize_weights(weights_);
  Tensor eff = binary_ ? binary_effective_weights(bin_state_) : weights_;
  Tensor rows = matmul_nt(flat_input_, eff);
  if (has_bias_) add_bias_rows(rows, bias_);
  return rows;
}

Tensor FcLayer::backward(const Tensor& upstream) {
  Tensor d_eff = matmul_tn(upstream, flat_input_);
  float* dw = d_weights_.data();
  const float* de = d_eff.data();
  for (int64_t i = 0; i < d_weights_.numel(); ++i) dw[i] += de[i];
  if (has_bias_) {
    const int64_t n = upstream.dim(0);
    const int f = upstream.dim(1);
    for (int64_t r = 0; r < n; ++r) {
      for (int of = 0; of < f; ++of) d_bias_[of] += upstream[r * f + of];
    }
  }
  Tensor eff = binary_ ? binary_effective_weights(bin_state_) : weights_;
  Tensor d_flat = matmul(upstream, eff);
  return d_flat.reshaped(in_shape_);
}

void FcLayer::collect_params(std::vector<Param>& out) {
  out.push_back({name_ + ".weight", &weights_, &d_weights_, true});
  if (has_bias_) out.push_back({name_ + ".bias", &bias_, &d_bias_, true});
}

void FcLayer::collect_state(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".weight", &weights_});
  if (has_bias_) out.push_back({name_ + ".bias", &bias_});
}

// ---------------------------------------------------------------------------
// MaxPoolLayer

Tensor MaxPoolLayer::forward(const Tensor& x, bool, uint64_t) {
  in_shape_ = x.shape();
  return max_pool2d(x, k_, stride_, &argmax_);
}

Tensor MaxPoolLayer::backward(const Tensor& upstream) {
  return max_pool2d_backward(in_shape_, argmax_, upstream);
}

// ---------------------------------------------------------------------------
// BatchNormLayer

Tensor BatchNormLayer::forward(const Tensor& x, bool training, uint64_t) {
  if (collecting_) {
    // accumulate per-batch statistics; finalized by end_stat_collection()
    BatchNormState scratch = state_;
    scratch.running_mean = Tensor::zeros({state_.gamma.dim(0)});
    scratch.running_var = Tensor::zeros({state_.gamma.dim(0)});
    scratch.momentum = 0.0f;  // running <- batch stat
    Tensor out = batch_norm_forward(x, scratch, true, nullptr);
    for (int c = 0; c < state_.gamma.dim(0); ++c) {
      state_.running_mean[c] += scratch.running_mean[c];
      state_.running_var[c] += scratch.running_var[c];
    }
    ++collected_batches_;
    return out;
  }
  if (!training) return batch_norm_forward(x, state_, false, nullptr);
  return batch_norm_forward(x, state_, true, &cache_);
}

Tensor BatchNormLayer::backward(const Tensor& upstream) {
  BatchNormGrads g = batch_norm_backward(upstream, state_, cache_);
  float* dg = d_gamma_.data();
  float* db = d_beta_.data();
  for (int c = 0; c < state_.gamma.dim(0); ++c) {
    dg[c] += g.d_gamma[c];
    db[c] += g.d_beta[c];
  }
  return std::move(g.d_input);
}

void BatchNormLayer::collect_params(std::vector<Param>& out) {
  out.push_back({name_ + ".gamma", &state_.gamma, &d_gamma_, false});
  out.push_back({name_ + ".beta", &state_.beta, &d_beta_, false});
}

void BatchNormLayer::collect_state(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".gamma", &state_.gamma});
  out.push_back({name_ + ".beta", &state_.beta});
  out.push_back({name_ + ".running_mean", &state_.running_mean});
  out.push_back({name_ + ".running_var", &state_.running_var});
}

void BatchNormLayer::begin_stat_collection() {
  collecting_ = true;
  collected_batches_ = 0;
  state_.running_mean.fill(0.0f);
  state_.running_var.fill(0.0f);
}

void BatchNormLayer::end_stat_collection() {
  require(collected_batches_ > 0, ErrorCategory::usage,
          name_ + ": no batches seen during statistic collection");
  float inv = 1.0f / static_cast<float>(collected_batches_);
  for (int c = 0; c < state_.gamma.dim(0); ++c) {
    state_.running_mean[c] *= inv;
    state_.running_var[c] *= inv;
  }
  collecting_ = false;
}

// ---------------------------------------------------------------------------
// ActivationLayer

Tensor ActivationLayer::forward(const Tensor& x, bool, uint64_t) {
  input_ = x;
  switch (kind_) {
    case Kind::relu: return relu_forward(x);
    case Kind::sign: return sign_forward(x);
    case Kind::hwgq: return hwgq_forward(x, *spec_);
  }
  fail(ErrorCategory::usage, "unreachable activation kind");
}

Tensor ActivationLayer::backward(const Tensor& upstream) {
  switch (kind_) {
    case Kind::relu: return relu_backward(input_, upstream);
    case Kind::sign: return sign_backward(input_, upstream);
    case Kind::hwgq: return hwgq_backward(input_, upstream, *spec_, mode_);
  }
  fail(ErrorCategory::usage, "unreachable activation kind");
}

// ---------------------------------------------------------------------------
// DropoutLayer

Tensor DropoutLayer::forward(const Tensor& x, bool training, uint64_t token) {
  if (!training) return x;
  Rng rng(split_seed(seed_, token));
  mask_ = Tensor(x.shape());
  Tensor out(x.shape());
  const float keep = static_cast<float>(1.0 - rate_);
  for (int64_t i = 0; i < x.numel(); ++i) {
    bool kept = rng.uniform() >= rate_;
    mask_[i] = kept ? 1.0f / keep : 0.0f;
    out[i] = x[i] * mask_[i];
  }
  return out;
}

Tensor DropoutLayer::backward(const Tensor& upstream) {
  Tensor out(upstream.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = upstream[i] * mask_[i];
  return out;
}

// ---------------------------------------------------------------------------
// Network

Tensor Network::forward(const Tensor& x, bool training, uint64_t token) {
  Tensor cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, training, token);
  return cur;
}

Tensor Network::backward(const Tensor& d_logits) {
  Tensor cur = d_logits;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

void Network::zero_grads() {
  for (Param& p : params()) p.grad->fill(0.0f);
}

std::vector<Param> Network::params() {
  std::vector<Param> out;
  for (auto& layer : layers_) layer->collect_params(out);
  return out;
}

std::vector<NamedTensor> Network::state() {
  std::vector<NamedTensor> out;
  for (auto& layer : layers_) layer->collect_state(out);
  return out;
}

void Network::set_packed_inference(bool on) {
  for (auto& layer : layers_) {
    if (auto* conv = dynamic_cast<ConvLayer*>(layer.get())) conv->set_packed_inference(on);
  }
}

void Network::begin_stat_collection() {
  for (auto& layer : layers_) {
    if (auto* bn = dynamic_cast<BatchNormLayer*>(layer.get())) bn->begin_stat_collection();
  }
}

void Network::end_stat_collection() {
  for (auto& layer : layers_) {
    if (auto* bn = dynamic_cast<BatchNormLayer*>(layer.get())) bn->end_stat_collection();
  }
}

Network build_network(const NetworkSpec& spec, const QuantizerSpec& quantizer,
                      BackwardMode mode, uint64_t seed) {
  validate_network_spec(spec);
  require(mode != BackwardMode::hard_tanh, ErrorCategory::config,
          "hard_tanh is the sign activation's backward; pick a ReLU-family mode for hwgq");

  bool quantized_activations = false;
  for (const auto& l : spec.layers) {
    if (l.activation == "hwgq" || l.activation == "sign") quantized_activations = true;
  }

  Network net;
  net.spec_ = spec;
  net.quantizer_ = quantizer;
  net.mode_ = mode;
  Rng init(split_seed(seed, 0x1717ULL));

  int c = spec.in_c, h = spec.in_h, w = spec.in_w;
  size_t dropout_counter = 0;
  const ActivationLayer* last_activation = nullptr;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    std::string base = "layer" + std::to_string(i);
    if (l.type == "dropout") {
      // Weight binarization already regularizes; dropout is only kept for
      // full-activation networks.
      if (!quantized_activations) {
        net.layers_.push_back(std::make_unique<DropoutLayer>(
            base + ".dropout", l.rate, split_seed(seed, 0xD0ULL, dropout_counter)));
      }
      ++dropout_counter;
      continue;
    }

    auto append_pool = [&]() {
      if (l.pool > 0) {
        int ps = l.pool_stride > 0 ? l.pool_stride : l.pool;
        net.layers_.push_back(std::make_unique<MaxPoolLayer>(base + ".pool", l.pool, ps));
        h = (h - l.pool) / ps + 1;
        w = (w - l.pool) / ps + 1;
      }
    };
    auto append_norm = [&](int channels) {
      if (l.norm) {
        net.layers_.push_back(std::make_unique<BatchNormLayer>(base + ".bn", channels));
      }
    };
    auto append_activation = [&]() {
      if (l.activation == "none") return;
      ActivationLayer::Kind kind = ActivationLayer::Kind::relu;
      BackwardMode m = mode;
      if (l.activation == "sign") {
        kind = ActivationLayer::Kind::sign;
        m = BackwardMode::hard_tanh;
      } else if (l.activation == "hwgq") {
        quantizer.validate();
        kind = ActivationLayer::Kind::hwgq;
      }
      auto act = std::make_unique<ActivationLayer>(base + ".act", kind, &net.quantizer_, m);
      last_activation = act.get();
      net.layers_.push_back(std::move(act));
    };

    if (l.type == "conv") {
      auto conv = std::make_unique<ConvLayer>(base + ".conv", c, l.out, l.kernel, l.stride,
                                              l.pad, l.weights == "binary", l.bias, init);
      // Record packed-path eligibility: binary conv fed by hwgq output.
      if (l.weights == "binary" && last_activation &&
          last_activation->kind() == ActivationLayer::Kind::hwgq) {
        conv->enable_packed(&net.quantizer_);
      }
      net.layers_.push_back(std::move(conv));
      c = l.out;
      h = (h + 2 * l.pad - l.kernel) / l.stride + 1;
      w = (w + 2 * l.pad - l.kernel) / l.stride + 1;
      last_activation = nullptr;
      if (spec.reorder_pooling) {
        append_pool();
        append_norm(c);
        append_activation();
      } else {
        append_norm(c);
        append_activation();
        append_pool();
      }
    } else {  // fc
      int in_features = c * h * w;
      net.layers_.push_back(std::make_unique<FcLayer>(base + ".fc", in_features, l.out,
                                                      l.weights == "binary", l.bias, init));
      c = l.out;
      h = 1;
      w = 1;
      last_activation = nullptr;
      append_norm(c);
      append_activation();
    }
  }
  return net;
}

}  // namespace lpnn
