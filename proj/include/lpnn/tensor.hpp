#ifndef LPNN_TENSOR_HPP_
#define LPNN_TENSOR_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lpnn/error.hpp"

namespace lpnn {

// Dense float32 tensor, row-major. Activations are NCHW, conv filters are
// OutxInxKhxKw, matrices are MxN. Reductions may accumulate in double.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float value);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NCHW accessor for rank-4 tensors.
  float& at4(int n, int c, int h, int w) {
    return data_[static_cast<size_t>(((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  float at4(int n, int c, int h, int w) const {
    return data_[static_cast<size_t>(((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  float& at2(int r, int c) { return data_[static_cast<size_t>(static_cast<int64_t>(r) * shape_[1] + c)]; }
  float at2(int r, int c) const { return data_[static_cast<size_t>(static_cast<int64_t>(r) * shape_[1] + c)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  Tensor reshaped(std::vector<int> new_shape) const;
  bool all_finite() const;
  std::string shape_str() const;  // e.g. "1x2x5x5"

  void fill(float value) { std::fill(data_.begin(), data_.end(), value); }

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

int64_t shape_numel(const std::vector<int>& shape);

// Deterministic pseudorandom stream. The generator is std::mt19937_64, whose
// output sequence is pinned by the C++ standard, so a given seed yields the
// same stream on every platform. Gaussian draws use the Box-Muller transform
// on explicit 53-bit uniforms (std::normal_distribution is
// implementation-defined and is deliberately avoided).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the second draw of each pair is cached.
  double gaussian();

  // Uniform integer in [0, n) by 128-bit multiply-shift.
  int64_t uniform_int(int64_t n);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int64_t> permutation(int64_t n);

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64-based stream derivation, used to key independent per-purpose
// streams (data order, augmentation, dropout) off one run seed.
uint64_t split_seed(uint64_t a, uint64_t b);
uint64_t split_seed(uint64_t a, uint64_t b, uint64_t c);

}  // namespace lpnn

#endif  // LPNN_TENSOR_HPP_
