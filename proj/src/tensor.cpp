#include "lpnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace lpnn {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    require(d >= 0, ErrorCategory::shape, "negative extent in shape");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_numel(shape_) == static_cast<int64_t>(data_.size()), ErrorCategory::shape,
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  require(shape_numel(new_shape) == numel(), ErrorCategory::shape,
          "reshape to " + Tensor(std::vector<int>(new_shape)).shape_str() + " changes element count of " + shape_str());
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  if (shape_.empty()) os << "scalar";
  return os.str();
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0,1] so log(u1) is finite; u2 in [0,1).
  double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int64_t Rng::uniform_int(int64_t n) {
  require(n > 0, ErrorCategory::usage, "uniform_int needs n > 0");
  unsigned __int128 wide = static_cast<unsigned __int128>(next_u64());
  return static_cast<int64_t>((wide * static_cast<unsigned __int128>(n)) >> 64);
}

std::vector<int64_t> Rng::permutation(int64_t n) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    int64_t j = uniform_int(i + 1);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

namespace {
uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

uint64_t split_seed(uint64_t a, uint64_t b) { return splitmix64(splitmix64(a) ^ b); }
uint64_t split_seed(uint64_t a, uint64_t b, uint64_t c) { return splitmix64(split_seed(a, b) ^ c); }

}  // namespace lpnn
