#ifndef LPNN_NETWORK_HPP_
#define LPNN_NETWORK_HPP_

#include <memory>
#include <string>
#include <vector>

#include "lpnn/bitkernels.hpp"
#include "lpnn/layers.hpp"
#include "lpnn/ops.hpp"
#include "lpnn/quantizer.hpp"

namespace lpnn {

// Declarative architecture description, read from JSON. A "conv"/"fc" entry
// is a block that expands to primitive layers in the order
//   conv -> max-pool (if any) -> batch-norm -> activation
// (pool moves after the activation when reorder_pooling is false).
struct LayerSpec {
  std::string type;                // conv | fc | dropout
  int out = 0;                     // output channels / features
  int kernel = 0, stride = 1, pad = 0;
  std::string weights = "full";    // full | binary
  std::string activation = "none"; // none | relu | sign | hwgq
  bool norm = false;
  int pool = 0;                    // pool window, 0 = none
  int pool_stride = 0;             // defaults to pool
  bool bias = true;                // forced false for binary weights
  double rate = 0.0;               // dropout rate
};

struct NetworkSpec {
  std::string name = "net";
  int in_c = 0, in_h = 0, in_w = 0;
  int classes = 0;
  bool reorder_pooling = true;  // max-pool before batch-norm
  std::vector<LayerSpec> layers;
};

NetworkSpec network_spec_from_json_text(const std::string& text);
std::string network_spec_to_json_text(const NetworkSpec& spec);

// Shape-checks the chain and enforces the precision rules: the first and
// last learnable layers must carry full-precision weights, the final layer
// emits raw logits (activation "none"), and binary layers carry no bias.
// Violations are rejected naming the offending layer.
void validate_network_spec(const NetworkSpec& spec);

struct Param {
  std::string name;
  Tensor* value;
  Tensor* grad;
  bool decay;  // weight decay applies (off for batch-norm gamma/beta)
};

struct NamedTensor {
  std::string name;
  Tensor* value;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training, uint64_t token) = 0;
  virtual Tensor backward(const Tensor& upstream) = 0;
  virtual void collect_params(std::vector<Param>&) {}
  virtual void collect_state(std::vector<NamedTensor>&) {}
  const std::string& name() const { return name_; }

 protected:
  std::string name_;
};

class ConvLayer : public Layer {
 public:
  ConvLayer(std::string name, int in_ch, int out_ch, int kernel, int stride, int pad,
            bool binary, bool bias, Rng& init);
  Tensor forward(const Tensor& x, bool training, uint64_t token) override;
  Tensor backward(const Tensor& upstream) override;
  void collect_params(std::vector<Param>& out) override;
  void collect_state(std::vector<NamedTensor>& out) override;

  bool binary() const { return binary_; }
  const BinaryWeightState& binary_state() const { return bin_state_; }
  Tensor& weights() { return weights_; }
  // Enables the XNOR-popcount path at inference when the incoming activations
  // are outputs of `spec` (uniform or m=1).
  void enable_packed(const QuantizerSpec* spec) { packed_spec_ = spec; }
  void set_packed_inference(bool on) { packed_on_ = on; }

 private:
  int stride_, pad_;
  bool binary_, has_bias_;
  Tensor weights_, bias_, d_weights_, d_bias_;
  BinaryWeightState bin_state_;
  const QuantizerSpec* packed_spec_ = nullptr;
  bool packed_on_ = false;
  // forward cache
  Tensor patches_;
  std::vector<int> in_shape_;
};

class FcLayer : public Layer {
 public:
  FcLayer(std::string name, int in_features, int out_features, bool binary, bool bias,
          Rng& init);
  Tensor forward(const Tensor& x, bool training, uint64_t token) override;
  Tensor backward(const Tensor& upstream) override;
  void collect_params(std::vector<Param>& out) override;
  void collect_state(std::vector<NamedTensor>& out) override;
  Tensor& weights() { return weights_; }
  bool binary() const { return binary_; }

 private:
  bool binary_, has_bias_;
  Tensor weights_, bias_, d_weights_, d_bias_;
  BinaryWeightState bin_state_;
  Tensor flat_input_;
  std::vector<int> in_shape_;
};

class MaxPoolLayer : public Layer {
 public:
  MaxPoolLayer(std::string name, int k, int stride)
      : Layer(std::move(name)), k_(k), stride_(stride) {}
  Tensor forward(const Tensor& x, bool training, uint64_t token) override;
  Tensor backward(const Tensor& upstream) override;

 private:
  int k_, stride_;
  std::vector<int64_t> argmax_;
  std::vector<int> in_shape_;
};

class BatchNormLayer : public Layer {
 public:
  BatchNormLayer(std::string name, int channels)
      : Layer(std::move(name)),
        state_(make_batch_norm(channels)),
        d_gamma_({channels}),
        d_beta_({channels}) {}
  Tensor forward(const Tensor& x, bool training, uint64_t token) override;
  Tensor backward(const Tensor& upstream) override;
  void collect_params(std::vector<Param>& out) override;
  void collect_state(std::vector<NamedTensor>& out) override;
  BatchNormState& state() { return state_; }
  // Statistic collection for the post-hoc quantization baseline: running
  // stats become plain averages of per-batch statistics.
  void begin_stat_collection();
  void end_stat_collection();

 private:
  BatchNormState state_;
  BatchNormCache cache_;
  Tensor d_gamma_, d_beta_;
  bool collecting_ = false;
  int64_t collected_batches_ = 0;
};

class ActivationLayer : public Layer {
 public:
  enum class Kind { relu, sign, hwgq };
  ActivationLayer(std::string name, Kind kind, const QuantizerSpec* spec, BackwardMode mode)
      : Layer(std::move(name)), kind_(kind), spec_(spec), mode_(mode) {}
  Tensor forward(const Tensor& x, bool training, uint64_t token) override;
  Tensor backward(const Tensor& upstream) override;
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
  const QuantizerSpec* spec_;
  BackwardMode mode_;
  Tensor input_;
};

class DropoutLayer : public Layer {
 public:
  DropoutLayer(std::string name, double rate, uint64_t seed)
      : Layer(std::move(name)), rate_(rate), seed_(seed) {}
  Tensor forward(const Tensor& x, bool training, uint64_t token) override;
  Tensor backward(const Tensor& upstream) override;

 private:
  double rate_;
  uint64_t seed_;
  Tensor mask_;
};

class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Tensor forward(const Tensor& x, bool training, uint64_t token = 0);
  Tensor backward(const Tensor& d_logits);
  void zero_grads();
  std::vector<Param> params();
  std::vector<NamedTensor> state();
  int class_count() const { return spec_.classes; }
  const NetworkSpec& spec() const { return spec_; }
  const QuantizerSpec& quantizer() const { return quantizer_; }
  BackwardMode backward_mode() const { return mode_; }
  std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }
  void set_packed_inference(bool on);
  void begin_stat_collection();
  void end_stat_collection();

 private:
  friend Network build_network(const NetworkSpec&, const QuantizerSpec&, BackwardMode, uint64_t);
  NetworkSpec spec_;
  QuantizerSpec quantizer_;
  BackwardMode mode_ = BackwardMode::clipped;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Expands the block spec into the primitive layer chain, validating shapes
// and precision rules. Weight init is He-normal from `seed` (deterministic).
// Dropout entries are removed when the network quantizes activations.
Network build_network(const NetworkSpec& spec, const QuantizerSpec& quantizer,
                      BackwardMode mode = BackwardMode::clipped, uint64_t seed = 1);

}  // namespace lpnn

#endif  // LPNN_NETWORK_HPP_
