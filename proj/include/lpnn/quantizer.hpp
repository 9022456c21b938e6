#ifndef LPNN_QUANTIZER_HPP_
#define LPNN_QUANTIZER_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "lpnn/tensor.hpp"

namespace lpnn {

// Half-wave scalar quantizer table: x <= 0 maps to 0, x in (t_i, t_{i+1}]
// maps to the positive level q_i. t_1 = 0 and t_{m+1} = +inf (stored as an
// actual infinity). Immutable after design; shareable across threads.
struct QuantizerSpec {
  std::vector<double> levels;      // q_1 < q_2 < ... < q_m, all > 0
  std::vector<double> thresholds;  // t_1 .. t_{m+1}, size m+1, front()==0, back()==inf
  bool uniform = false;
  double delta = 0.0;  // quantization step, meaningful when uniform
  double mse = 0.0;    // achieved mean-squared error on the design samples
  uint64_t seed = 0;   // provenance of the design corpus (0 if external samples)
  int64_t sample_count = 0;

  int m() const { return static_cast<int>(levels.size()); }
  double q_max() const { return levels.back(); }
  void validate() const;  // throws on violated invariants
};

// Lloyd's algorithm on the positive part of `samples` (negative samples are
// discarded; the zero branch of the half-wave quantizer is fixed, not
// optimized). Alternates centroid and midpoint updates until the MSE change
// drops below `tol` or `max_iters` is reached. Levels are initialized at the
// (2i-1)/(2m) quantiles of the positive samples; an emptied cell is re-seeded
// on the sample with the largest current quantization error.
QuantizerSpec lloyd_design(const Tensor& samples, int m, int max_iters = 1000,
                           double tol = 1e-8);

// As lloyd_design but constrained to q_i = i*Delta. Alternates threshold
// assignment (t_{i+1} = (q_i + q_{i+1})/2, last cell unbounded) with the
// closed-form step update Delta = sum(i_x * x) / sum(i_x^2).
QuantizerSpec uniform_design(const Tensor& samples, int m, int max_iters = 1000,
                             double tol = 1e-8);

// Total functions; x <= 0 (or NaN) yields 0 / index 0. Intervals are
// left-open, right-closed: x == t_2 maps to q_1.
double quantize(double x, const QuantizerSpec& spec);
int quantize_index(double x, const QuantizerSpec& spec);

// JSON document: fields m, uniform, delta, levels[], thresholds[], mse, seed,
// sample_count. The +inf sentinel serializes as null; reals round-trip
// exactly. Serialization is deterministic (same spec -> same bytes).
std::string quantizer_to_json(const QuantizerSpec& spec);
QuantizerSpec quantizer_from_json(const std::string& text);
void save_quantizer(const QuantizerSpec& spec, const std::string& path);
QuantizerSpec load_quantizer(const std::string& path);

// Convenience: draw n standard-Gaussian samples from `seed`, design, and
// stamp provenance fields.
QuantizerSpec design_hwgq(uint64_t seed, int64_t n, int m, bool uniform,
                          int max_iters = 1000, double tol = 1e-8);

}  // namespace lpnn

#endif  // LPNN_QUANTIZER_HPP_
