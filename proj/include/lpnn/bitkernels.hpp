#ifndef LPNN_BITKERNELS_HPP_
#define LPNN_BITKERNELS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "lpnn/binarize.hpp"
#include "lpnn/quantizer.hpp"
#include "lpnn/tensor.hpp"

namespace lpnn {

// Bit-packed vector, 64-bit words, LSB-first within a word. Bits past
// logical_len are guaranteed zero so whole-word popcounts need no per-call
// masking.
struct PackedBits {
  std::vector<uint64_t> words;
  int64_t logical_len = 0;

  int64_t word_count() const { return static_cast<int64_t>(words.size()); }
  bool get(int64_t j) const {
    return (words[static_cast<size_t>(j >> 6)] >> (j & 63)) & 1u;
  }
  void set(int64_t j) { words[static_cast<size_t>(j >> 6)] |= (uint64_t{1} << (j & 63)); }
};

PackedBits make_packed(int64_t logical_len);

// bit j = 1 iff x_j >= 0 (the sign(0) = +1 convention).
PackedBits pack_signs(const float* x, int64_t n);
PackedBits pack_signs(const Tensor& x);

// +-1 dot product of two packed sign vectors: 2*matches - len, computed by
// XNOR + popcount. Exact (integer) for any length.
int64_t xnor_dot(const PackedBits& a, const PackedBits& b);

// Signed overlap of a bitplane with a packed sign vector, restricted to the
// mask: positions with mask=0 contribute 0; positions with mask=1 and
// plane-bit=1 contribute +1 where the weight bit is 1 and -1 where it is 0.
// With plane a subset of mask this equals sum_j plane_j * w_j.
int64_t masked_xnor_dot(const PackedBits& plane, const PackedBits& w, const PackedBits& mask);

// Uniform-quantizer activations as level-index bitplanes (LSB first) plus a
// nonzero mask. Reconstruction: value_j = delta * sum_b 2^b * plane_b[j],
// which reproduces quantize(x_j) exactly for uniform specs. A non-uniform
// m=1 spec is accepted with delta = q_1.
struct BitplaneActivations {
  std::vector<PackedBits> planes;
  PackedBits nonzero_mask;
  double delta = 0.0;

  int64_t len() const { return nonzero_mask.logical_len; }
};

BitplaneActivations pack_quantized(const float* x, int64_t n, const QuantizerSpec& spec);
BitplaneActivations pack_quantized(const Tensor& x, const QuantizerSpec& spec);

// alpha * delta * sum_b 2^b * masked_xnor_dot(plane_b, w, mask). The integer
// sum is exact; only the final scale rounds.
double quantized_binary_dot(const BitplaneActivations& act, const PackedBits& w, double alpha);

// Integer core of quantized_binary_dot (before the alpha*delta scale).
int64_t quantized_binary_dot_int(const BitplaneActivations& act, const PackedBits& w);

// XNOR-popcount convolution over bitplane-packed activations. Requires a
// uniform spec (or m = 1); input elements must lie in {0} union levels.
// Bit-exact integer accumulation; agrees with the float binary_conv2d path.
Tensor binary_conv2d_packed(const Tensor& input_q, const BinaryWeightState& state,
                            const QuantizerSpec& spec, int stride, int padding);

// Portable bit-twiddling popcount; must agree with the hardware/std path.
int portable_popcount(uint64_t x);

struct BenchRow {
  int64_t size = 0;
  std::string path;
  double ns_per_call = 0.0;
  double gops = 0.0;
  int64_t checksum = 0;
};

// Times the float vs XNOR-packed +-1 dot product at each size. Checksums are
// the integer dot results and must agree across paths for a given size.
std::vector<BenchRow> bench_kernels(const std::vector<int64_t>& sizes, uint64_t seed = 42);

std::string bench_csv(const std::vector<BenchRow>& rows);
std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace lpnn

#endif  // LPNN_BITKERNELS_HPP_
