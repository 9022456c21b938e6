#ifndef LPNN_DATA_HPP_
#define LPNN_DATA_HPP_

#include <string>
#include <utility>
#include <vector>

#include "lpnn/tensor.hpp"

namespace lpnn {

struct Dataset {
  Tensor images;            // N x C x H x W, channel-normalized
  std::vector<int> labels;  // in [0, class_count)
  int class_count = 0;
  std::string split;        // "train" | "test"
  std::string kind;         // "mnist" | "cifar10" | "synthetic"
  // Normalization applied after scaling pixels to [0,1]; recorded so that
  // inference reuses train-time statistics.
  std::vector<float> mean, stddev;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

// IDX-format MNIST: train-images-idx3-ubyte / train-labels-idx1-ubyte /
// t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte under `dir` (decompressed).
// Magic 0x00000803 (images) / 0x00000801 (labels), big-endian extents.
// Malformed files are rejected naming the byte offset or expected length.
std::pair<Dataset, Dataset> load_mnist(const std::string& dir);

// CIFAR-10 binary batches: data_batch_1..5.bin + test_batch.bin, records of
// 1 label byte + 3072 pixel bytes.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Built-in CI dataset: seeded Gaussian-blob classes rendered as images with
// per-sample jitter and additive noise. No files, fully deterministic.
std::pair<Dataset, Dataset> make_synthetic(int classes, int n_train, int n_test, int c, int h,
                                           int w, uint64_t seed, double noise = 0.25);

struct AugmentPolicy {
  bool flip = true;  // horizontal flip with p = 0.5
  int pad = 0;       // zero-pad then random crop back (0 disables)
};

// Per-sample independent augmentation, in place. Draw order is fixed (flip
// decision, then crop offsets) so a seeded rng reproduces the batch exactly.
void augment(Tensor& batch, const AugmentPolicy& policy, Rng& rng);

// Takes rows `indices` of the dataset into a batch tensor + labels.
void gather_batch(const Dataset& ds, const std::vector<int64_t>& indices, int64_t begin,
                  int64_t count, Tensor* images, std::vector<int>* labels);

// FNV-1a over the float bytes of image `index`; the loaders' golden-checksum
// hook.
uint64_t image_checksum(const Dataset& ds, int64_t index);

}  // namespace lpnn

#endif  // LPNN_DATA_HPP_
