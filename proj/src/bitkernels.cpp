#include "lpnn/bitkernels.hpp"

#include <Eigen/Core>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace lpnn {

namespace {

inline int pc(uint64_t x) { return std::popcount(x); }

int64_t plane_bits_needed(int m) {
  int bits = 0;
  while ((1 << bits) < m + 1) ++bits;
  return bits;
}

void check_packable(const QuantizerSpec& spec) {
  spec.validate();
  require(spec.uniform || spec.m() == 1, ErrorCategory::usage,
          "bitplane packing needs a uniform quantizer (or m=1); use the float "
          "binary_conv2d path for non-uniform multi-level specs");
}

double effective_delta(const QuantizerSpec& spec) {
  return spec.uniform ? spec.delta : spec.levels[0];
}

}  // namespace

int portable_popcount(uint64_t x) {
  x = x - ((x >> 1) & 0x5555555555555555ULL);
  x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
  x = (x + (x >> 4)) & 0x0f0f0f0f0f0f0f0fULL;
  return static_cast<int>((x * 0x0101010101010101ULL) >> 56);
}

PackedBits make_packed(int64_t logical_len) {
  PackedBits p;
  p.logical_len = logical_len;
  p.words.assign(static_cast<size_t>((logical_len + 63) >> 6), 0);
  return p;
}

PackedBits pack_signs(const float* x, int64_t n) {
  PackedBits p = make_packed(n);
  for (int64_t j = 0; j < n; ++j) {
    if (x[j] >= 0.0f) p.set(j);
  }
  return p;
}

PackedBits pack_signs(const Tensor& x) { return pack_signs(x.data(), x.numel()); }

int64_t xnor_dot(const PackedBits& a, const PackedBits& b) {
  require(a.logical_len == b.logical_len, ErrorCategory::shape,
          "xnor_dot length mismatch: " + std::to_string(a.logical_len) + " vs " +
              std::to_string(b.logical_len));
  // Padding bits are zero in both operands, so XOR has no stray bits and the
  // mismatch count needs no final-word mask.
  int64_t mismatches = 0;
  for (size_t w = 0; w < a.words.size(); ++w) mismatches += pc(a.words[w] ^ b.words[w]);
  return a.logical_len - 2 * mismatches;
}

int64_t masked_xnor_dot(const PackedBits& plane, const PackedBits& w, const PackedBits& mask) {
  require(plane.logical_len == w.logical_len && plane.logical_len == mask.logical_len,
          ErrorCategory::shape, "masked_xnor_dot length mismatch");
  int64_t matched = 0, active = 0;
  for (size_t i = 0; i < plane.words.size(); ++i) {
    uint64_t live = plane.words[i] & mask.words[i];
    matched += pc(live & w.words[i]);
    active += pc(live);
  }
  return 2 * matched - active;
}

BitplaneActivations pack_quantized(const float* x, int64_t n, const QuantizerSpec& spec) {
  check_packable(spec);
  const int m = spec.m();
  const int64_t bits = plane_bits_needed(m);
  BitplaneActivations act;
  act.delta = effective_delta(spec);
  act.nonzero_mask = make_packed(n);
  act.planes.resize(static_cast<size_t>(bits));
  for (auto& p : act.planes) p = make_packed(n);
  for (int64_t j = 0; j < n; ++j) {
    int idx = quantize_index(static_cast<double>(x[j]), spec);
    double level = idx == 0 ? 0.0 : spec.levels[static_cast<size_t>(idx - 1)];
    require(static_cast<float>(level) == x[j], ErrorCategory::usage,
            "pack_quantized: input value " + std::to_string(x[j]) +
                " is not an output level of the quantizer");
    if (idx == 0) continue;
    act.nonzero_mask.set(j);
    for (int b = 0; b < bits; ++b) {
      if ((idx >> b) & 1) act.planes[static_cast<size_t>(b)].set(j);
    }
  }
  return act;
}

BitplaneActivations pack_quantized(const Tensor& x, const QuantizerSpec& spec) {
  return pack_quantized(x.data(), x.numel(), spec);
}

int64_t quantized_binary_dot_int(const BitplaneActivations& act, const PackedBits& w) {
  int64_t sum = 0;
  for (size_t b = 0; b < act.planes.size(); ++b) {
    sum += (int64_t{1} << b) * masked_xnor_dot(act.planes[b], w, act.nonzero_mask);
  }
  return sum;
}

double quantized_binary_dot(const BitplaneActivations& act, const PackedBits& w, double alpha) {
  require(act.len() == w.logical_len, ErrorCategory::shape,
          "quantized_binary_dot length mismatch: " + std::to_string(act.len()) + " vs " +
              std::to_string(w.logical_len));
  return alpha * (act.delta * static_cast<double>(quantized_binary_dot_int(act, w)));
}

Tensor binary_conv2d_packed(const Tensor& input_q, const BinaryWeightState& state,
                            const QuantizerSpec& spec, int stride, int padding) {
  check_packable(spec);
  const Tensor& filters = state.master;
  require(input_q.rank() == 4 && filters.rank() == 4, ErrorCategory::shape,
          "binary_conv2d_packed expects NxCxHxW input and FxCxKhxKw filters");
  require(filters.dim(1) == input_q.dim(1), ErrorCategory::shape,
          "binary_conv2d_packed channel mismatch: input " + input_q.shape_str() +
              " vs filters " + filters.shape_str());
  const int n = input_q.dim(0), c = input_q.dim(1), h = input_q.dim(2), w = input_q.dim(3);
  const int f = filters.dim(0), kh = filters.dim(2), kw = filters.dim(3);
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  require(h + 2 * padding >= kh && w + 2 * padding >= kw, ErrorCategory::shape,
          "binary_conv2d_packed kernel larger than padded input");
  const int64_t cols = static_cast<int64_t>(c) * kh * kw;
  const int m = spec.m();
  const int bits = static_cast<int>(plane_bits_needed(m));
  const double delta = effective_delta(spec);

  // Level-index image; padding positions stay index 0 (zero activation).
  std::vector<uint8_t> idx(static_cast<size_t>(input_q.numel()));
  for (int64_t i = 0; i < input_q.numel(); ++i) {
    int q = quantize_index(static_cast<double>(input_q[i]), spec);
    double level = q == 0 ? 0.0 : spec.levels[static_cast<size_t>(q - 1)];
    require(static_cast<float>(level) == input_q[i], ErrorCategory::usage,
            "binary_conv2d_packed: input is not quantized by the given spec");
    idx[static_cast<size_t>(i)] = static_cast<uint8_t>(q);
  }

  // Weight sign bits per output filter, packed along the same patch axis.
  std::vector<PackedBits> wbits(static_cast<size_t>(f));
  const float* wsrc = filters.data();
  for (int of = 0; of < f; ++of) {
    wbits[static_cast<size_t>(of)] = pack_signs(wsrc + static_cast<int64_t>(of) * cols, cols);
  }

  Tensor out({n, f, ho, wo});
  std::vector<uint8_t> patch(static_cast<size_t>(cols));
  std::vector<PackedBits> planes(static_cast<size_t>(bits));
  const int64_t hw_out = static_cast<int64_t>(ho) * wo;
  for (int in = 0; in < n; ++in) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        int64_t col = 0;
        for (int ic = 0; ic < c; ++ic) {
          const uint8_t* plane_src = idx.data() + (static_cast<int64_t>(in) * c + ic) * h * w;
          for (int ky = 0; ky < kh; ++ky) {
            int iy = oy * stride - padding + ky;
            for (int kx = 0; kx < kw; ++kx, ++col) {
              int ix = ox * stride - padding + kx;
              patch[static_cast<size_t>(col)] =
                  (iy >= 0 && iy < h && ix >= 0 && ix < w)
                      ? plane_src[static_cast<int64_t>(iy) * w + ix]
                      : uint8_t{0};
            }
          }
        }
        for (int b = 0; b < bits; ++b) {
          planes[static_cast<size_t>(b)] = make_packed(cols);
          for (int64_t j = 0; j < cols; ++j) {
            if ((patch[static_cast<size_t>(j)] >> b) & 1) planes[static_cast<size_t>(b)].set(j);
          }
        }
        for (int of = 0; of < f; ++of) {
          int64_t s = 0;
          for (int b = 0; b < bits; ++b) {
            // plane is its own mask here: bits only at nonzero positions
            const PackedBits& plane = planes[static_cast<size_t>(b)];
            const PackedBits& wb = wbits[static_cast<size_t>(of)];
            int64_t matched = 0, active = 0;
            for (size_t wi = 0; wi < plane.words.size(); ++wi) {
              matched += pc(plane.words[wi] & wb.words[wi]);
              active += pc(plane.words[wi]);
            }
            s += (int64_t{1} << b) * (2 * matched - active);
          }
          double val = static_cast<double>(state.alpha[static_cast<size_t>(of)]) *
                       (delta * static_cast<double>(s));
          out.data()[(static_cast<int64_t>(in) * f + of) * hw_out +
                     static_cast<int64_t>(oy) * wo + ox] = static_cast<float>(val);
        }
      }
    }
  }
  return out;
}

std::vector<BenchRow> bench_kernels(const std::vector<int64_t>& sizes, uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  Rng rng(seed);
  for (int64_t n : sizes) {
    require(n >= 1, ErrorCategory::usage, "bench size must be >= 1");
    std::vector<float> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      a[static_cast<size_t>(i)] = rng.uniform() < 0.5 ? -1.0f : 1.0f;
      b[static_cast<size_t>(i)] = rng.uniform() < 0.5 ? -1.0f : 1.0f;
    }
    PackedBits pa = pack_signs(a.data(), n);
    PackedBits pb = pack_signs(b.data(), n);

    auto time_path = [&](auto&& fn) {
      // warm-up + rep scaling to ~20ms per path
      volatile int64_t sink = fn();
      int reps = 4;
      double ns = 0.0;
      for (;;) {
        auto t0 = clock::now();
        for (int r = 0; r < reps; ++r) sink = sink + fn();
        auto t1 = clock::now();
        ns = std::chrono::duration<double, std::nano>(t1 - t0).count();
        if (ns > 2e7 || reps > (1 << 24)) break;
        reps *= 4;
      }
      return ns / reps;
    };

    Eigen::Map<const Eigen::VectorXf> va(a.data(), n), vb(b.data(), n);
    int64_t float_dot = 0;
    double float_ns = time_path([&]() {
      float d = va.dot(vb);
      float_dot = static_cast<int64_t>(d);
      return float_dot;
    });
    int64_t packed_dot = 0;
    double packed_ns = time_path([&]() {
      packed_dot = xnor_dot(pa, pb);
      return packed_dot;
    });

    rows.push_back({n, "float", float_ns, 2.0 * static_cast<double>(n) / float_ns, float_dot});
    rows.push_back({n, "xnor", packed_ns, 2.0 * static_cast<double>(n) / packed_ns, packed_dot});
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "size,path,ns_per_call,gops,checksum\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%s,%.2f,%.4f,%lld\n",
                  static_cast<long long>(r.size), r.path.c_str(), r.ns_per_call, r.gops,
                  static_cast<long long>(r.checksum));
    os << buf;
  }
  return os.str();
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "  size        path      ns/call        GOPS   checksum  check\n";
  char buf[200];
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    // paths for one size are adjacent; compare against the float row
    bool exact = true;
    for (const auto& other : rows) {
      if (other.size == r.size && other.checksum != r.checksum) exact = false;
    }
    std::snprintf(buf, sizeof buf, "%8lld  %10s  %11.2f  %10.4f  %9lld  %s\n",
                  static_cast<long long>(r.size), r.path.c_str(), r.ns_per_call, r.gops,
                  static_cast<long long>(r.checksum), exact ? "exact" : "MISMATCH");
    os << buf;
  }
  return os.str();
}

}  // namespace lpnn
