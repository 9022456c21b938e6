#include "lpnn/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "lpnn/ops.hpp"

namespace lpnn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> positive_sorted(const Tensor& samples) {
  require(samples.numel() > 0, ErrorCategory::usage, "quantizer design needs non-empty samples");
  std::vector<double> xs;
  xs.reserve(static_cast<size_t>(samples.numel()));
  for (int64_t i = 0; i < samples.numel(); ++i) {
    float v = samples[i];
    if (v > 0.0f) xs.push_back(static_cast<double>(v));
  }
  std::sort(xs.begin(), xs.end());
  return xs;
}

size_t count_distinct(const std::vector<double>& sorted) {
  size_t d = 0;
  for (size_t i = 0; i < sorted.size(); ++i) {
    if (i == 0 || sorted[i] != sorted[i - 1]) ++d;
  }
  return d;
}

// Cell boundaries of sorted samples for thresholds t_1..t_{m+1}: cell i holds
// samples in (t_i, t_{i+1}]. Returns m+1 split positions into the array.
std::vector<size_t> cell_bounds(const std::vector<double>& xs, const std::vector<double>& th) {
  std::vector<size_t> bounds(th.size());
  for (size_t i = 0; i < th.size(); ++i) {
    // first index with x > t_i  (upper_bound: left-open cells)
    bounds[i] = static_cast<size_t>(std::upper_bound(xs.begin(), xs.end(), th[i]) - xs.begin());
  }
  return bounds;
}

std::vector<double> midpoint_thresholds(const std::vector<double>& levels) {
  std::vector<double> th(levels.size() + 1);
  th[0] = 0.0;
  for (size_t i = 1; i < levels.size(); ++i) th[i] = 0.5 * (levels[i - 1] + levels[i]);
  th[levels.size()] = kInf;
  return th;
}

double cells_mse(const std::vector<double>& xs, const std::vector<size_t>& bounds,
                 const std::vector<double>& levels) {
  double err = 0.0;
  for (size_t i = 0; i < levels.size(); ++i) {
    for (size_t j = bounds[i]; j < bounds[i + 1]; ++j) {
      double d = xs[j] - levels[i];
      err += d * d;
    }
  }
  return err / static_cast<double>(xs.size());
}

}  // namespace

void QuantizerSpec::validate() const {
  require(!levels.empty(), ErrorCategory::format, "quantizer spec has no levels");
  require(thresholds.size() == levels.size() + 1, ErrorCategory::format,
          "quantizer spec needs m+1 thresholds");
  require(thresholds.front() == 0.0, ErrorCategory::format, "t_1 must be 0");
  require(std::isinf(thresholds.back()), ErrorCategory::format, "t_{m+1} must be +inf");
  require(levels.front() > 0.0, ErrorCategory::format, "levels must be positive");
  for (size_t i = 1; i < levels.size(); ++i) {
    require(levels[i] > levels[i - 1], ErrorCategory::format, "levels must be increasing");
  }
  for (size_t i = 1; i < thresholds.size(); ++i) {
    require(thresholds[i] > thresholds[i - 1], ErrorCategory::format,
            "thresholds must be increasing");
  }
  if (uniform) {
    require(delta > 0.0, ErrorCategory::format, "uniform spec needs delta > 0");
    for (size_t i = 0; i < levels.size(); ++i) {
      require(std::abs(levels[i] - static_cast<double>(i + 1) * delta) <= 1e-9,
              ErrorCategory::format, "uniform spec levels must equal i*delta");
    }
  }
}

QuantizerSpec lloyd_design(const Tensor& samples, int m, int max_iters, double tol) {
  require(m >= 1, ErrorCategory::usage, "lloyd_design needs m >= 1");
  std::vector<double> xs = positive_sorted(samples);
  require(count_distinct(xs) >= static_cast<size_t>(m), ErrorCategory::usage,
          "lloyd_design needs at least m distinct positive samples (have " +
              std::to_string(count_distinct(xs)) + ", need " + std::to_string(m) + ")");

  const size_t n = xs.size();
  std::vector<double> levels(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    size_t idx = static_cast<size_t>(
        std::min<double>(static_cast<double>(n) * (2.0 * i + 1.0) / (2.0 * m),
                         static_cast<double>(n - 1)));
    levels[static_cast<size_t>(i)] = xs[idx];
    // quantile ties (discrete data): slide to the next distinct value
    while (i > 0 && levels[static_cast<size_t>(i)] <= levels[static_cast<size_t>(i - 1)]) {
      if (++idx >= n) {
        levels[static_cast<size_t>(i)] = levels[static_cast<size_t>(i - 1)] + 1e-12;
        break;
      }
      levels[static_cast<size_t>(i)] = xs[idx];
    }
  }

  std::vector<double> th = midpoint_thresholds(levels);
  std::vector<size_t> bounds = cell_bounds(xs, th);
  double mse = cells_mse(xs, bounds, levels);

  for (int iter = 0; iter < max_iters; ++iter) {
    th = midpoint_thresholds(levels);
    bounds = cell_bounds(xs, th);

    // Re-seed empty cells on the worst-quantized sample.
    for (int attempt = 0; attempt < m; ++attempt) {
      int empty = -1;
      for (int i = 0; i < m; ++i) {
        if (bounds[static_cast<size_t>(i)] == bounds[static_cast<size_t>(i + 1)]) {
          empty = i;
          break;
        }
      }
      if (empty < 0) break;
      double worst_err = -1.0;
      size_t worst = 0;
      for (size_t ci = 0; ci < static_cast<size_t>(m); ++ci) {
        for (size_t j = bounds[ci]; j < bounds[ci + 1]; ++j) {
          double e = std::abs(xs[j] - levels[ci]);
          if (e > worst_err) {
            worst_err = e;
            worst = j;
          }
        }
      }
      levels[static_cast<size_t>(empty)] = xs[worst];
      std::sort(levels.begin(), levels.end());
      th = midpoint_thresholds(levels);
      bounds = cell_bounds(xs, th);
    }

    // Centroid step.
    double moved = 0.0;
    for (size_t i = 0; i < static_cast<size_t>(m); ++i) {
      if (bounds[i] == bounds[i + 1]) continue;
      double sum = 0.0;
      for (size_t j = bounds[i]; j < bounds[i + 1]; ++j) sum += xs[j];
      double centroid = sum / static_cast<double>(bounds[i + 1] - bounds[i]);
      moved = std::max(moved, std::abs(centroid - levels[i]));
      levels[i] = centroid;
    }

    double new_mse = cells_mse(xs, bounds, levels);
    // MSE flattens near the fixed point long before the levels settle, so
    // convergence also requires the levels themselves to stop moving.
    bool converged = std::abs(mse - new_mse) < tol && moved < 1e-9;
    mse = new_mse;
    if (converged) break;
  }

  QuantizerSpec spec;
  spec.levels = levels;
  spec.thresholds = midpoint_thresholds(levels);
  bounds = cell_bounds(xs, spec.thresholds);
  spec.mse = cells_mse(xs, bounds, levels);
  spec.uniform = false;
  spec.delta = 0.0;
  spec.sample_count = samples.numel();
  spec.validate();
  return spec;
}

QuantizerSpec uniform_design(const Tensor& samples, int m, int max_iters, double tol) {
  require(m >= 1, ErrorCategory::usage, "uniform_design needs m >= 1");
  std::vector<double> xs = positive_sorted(samples);
  require(count_distinct(xs) >= static_cast<size_t>(m), ErrorCategory::usage,
          "uniform_design needs at least m distinct positive samples (have " +
              std::to_string(count_distinct(xs)) + ", need " + std::to_string(m) + ")");

  const size_t n = xs.size();
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  double delta = 2.0 * mean / static_cast<double>(m + 1);

  // Level index of x under step d: cells ((i-1/2)d, (i+1/2)d], top unbounded.
  auto index_of = [m](double x, double d) {
    double t = std::ceil(x / d - 0.5);
    if (t < 1.0) return 1;
    if (t > static_cast<double>(m)) return m;
    return static_cast<int>(t);
  };

  double mse = kInf;
  for (int iter = 0; iter < max_iters; ++iter) {
    double s1 = 0.0, s2 = 0.0;
    for (double x : xs) {
      int i = index_of(x, delta);
      s1 += static_cast<double>(i) * x;
      s2 += static_cast<double>(i) * static_cast<double>(i);
    }
    double new_delta = s1 / s2;
    double err = 0.0;
    for (double x : xs) {
      double d = static_cast<double>(index_of(x, delta)) * new_delta - x;
      err += d * d;
    }
    double new_mse = err / static_cast<double>(n);
    bool converged = std::abs(mse - new_mse) < tol && std::abs(new_delta - delta) < 1e-12;
    delta = new_delta;
    mse = new_mse;
    if (converged) break;
  }

  QuantizerSpec spec;
  spec.uniform = true;
  spec.delta = delta;
  spec.levels.resize(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) spec.levels[static_cast<size_t>(i)] = static_cast<double>(i + 1) * delta;
  spec.thresholds = midpoint_thresholds(spec.levels);
  // Final MSE under the final spec.
  double err = 0.0;
  for (double x : xs) {
    double d = quantize(x, spec) - x;
    err += d * d;
  }
  spec.mse = err / static_cast<double>(n);
  spec.sample_count = samples.numel();
  spec.validate();
  return spec;
}

int quantize_index(double x, const QuantizerSpec& spec) {
  if (!(x > 0.0)) return 0;  // also catches NaN
  // 1 + number of interior thresholds (t_2..t_m) strictly below x.
  const double* begin = spec.thresholds.data() + 1;
  const double* end = spec.thresholds.data() + spec.thresholds.size() - 1;
  return 1 + static_cast<int>(std::lower_bound(begin, end, x) - begin);
}

double quantize(double x, const QuantizerSpec& spec) {
  int i = quantize_index(x, spec);
  return i == 0 ? 0.0 : spec.levels[static_cast<size_t>(i - 1)];
}

std::string quantizer_to_json(const QuantizerSpec& spec) {
  nlohmann::json j;
  j["m"] = spec.m();
  j["uniform"] = spec.uniform;
  if (spec.uniform) {
    j["delta"] = spec.delta;
  } else {
    j["delta"] = nullptr;
  }
  j["levels"] = spec.levels;
  j["thresholds"] = spec.thresholds;  // +inf dumps as null
  j["mse"] = spec.mse;
  j["seed"] = spec.seed;
  j["sample_count"] = spec.sample_count;
  return j.dump(2) + "\n";
}

QuantizerSpec quantizer_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, std::string("quantizer JSON parse error: ") + e.what());
  }
  QuantizerSpec spec;
  try {
    spec.uniform = j.at("uniform").get<bool>();
    spec.delta = (j.contains("delta") && !j["delta"].is_null()) ? j["delta"].get<double>() : 0.0;
    spec.levels = j.at("levels").get<std::vector<double>>();
    spec.thresholds.clear();
    for (const auto& t : j.at("thresholds")) {
      spec.thresholds.push_back(t.is_null() ? kInf : t.get<double>());
    }
    spec.mse = j.at("mse").get<double>();
    spec.seed = j.value("seed", uint64_t{0});
    spec.sample_count = j.value("sample_count", int64_t{0});
    int m = j.at("m").get<int>();
    require(m == spec.m(), ErrorCategory::format, "quantizer JSON: m does not match levels[]");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, std::string("quantizer JSON field error: ") + e.what());
  }
  spec.validate();
  return spec;
}

void save_quantizer(const QuantizerSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCategory::io, "cannot open for writing: " + path);
  out << quantizer_to_json(spec);
  require(out.good(), ErrorCategory::io, "write failed: " + path);
}

QuantizerSpec load_quantizer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open quantizer table: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return quantizer_from_json(text);
}

QuantizerSpec design_hwgq(uint64_t seed, int64_t n, int m, bool uniform, int max_iters,
                          double tol) {
  Rng rng(seed);
  Tensor samples = gaussian_samples(rng, n);
  QuantizerSpec spec = uniform ? uniform_design(samples, m, max_iters, tol)
                               : lloyd_design(samples, m, max_iters, tol);
  spec.seed = seed;
  spec.sample_count = n;
  return spec;
}

}  // namespace lpnn
