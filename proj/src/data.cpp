#include "lpnn/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace lpnn {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off) {
  return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
         (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
}

struct IdxImages {
  uint32_t count, rows, cols;
  const uint8_t* pixels;
};

IdxImages parse_idx_images(const std::vector<uint8_t>& bytes, const std::string& path) {
  require(bytes.size() >= 16, ErrorCategory::format,
          path + ": truncated IDX header, have " + std::to_string(bytes.size()) +
              " bytes, need 16");
  uint32_t magic = be32(bytes, 0);
  require(magic == 0x00000803u, ErrorCategory::format,
          path + ": bad image magic at byte offset 0: got 0x" +
              [&] { char b[16]; std::snprintf(b, sizeof b, "%08x", magic); return std::string(b); }() +
              ", expected 0x00000803");
  IdxImages img;
  img.count = be32(bytes, 4);
  img.rows = be32(bytes, 8);
  img.cols = be32(bytes, 12);
  size_t expected = 16 + static_cast<size_t>(img.count) * img.rows * img.cols;
  require(bytes.size() == expected, ErrorCategory::format,
          path + ": byte count mismatch: expected " + std::to_string(expected) + ", actual " +
              std::to_string(bytes.size()));
  img.pixels = bytes.data() + 16;
  return img;
}

std::vector<int> parse_idx_labels(const std::vector<uint8_t>& bytes, const std::string& path) {
  require(bytes.size() >= 8, ErrorCategory::format,
          path + ": truncated IDX header, have " + std::to_string(bytes.size()) +
              " bytes, need 8");
  uint32_t magic = be32(bytes, 0);
  require(magic == 0x00000801u, ErrorCategory::format,
          path + ": bad label magic at byte offset 0: expected 0x00000801");
  uint32_t count = be32(bytes, 4);
  size_t expected = 8 + static_cast<size_t>(count);
  require(bytes.size() == expected, ErrorCategory::format,
          path + ": byte count mismatch: expected " + std::to_string(expected) + ", actual " +
              std::to_string(bytes.size()));
  std::vector<int> labels(count);
  for (uint32_t i = 0; i < count; ++i) labels[i] = bytes[8 + i];
  return labels;
}

// Channel statistics over the train split, applied to both splits.
void normalize_pair(Dataset& train, Dataset& test) {
  const int c = train.images.dim(1);
  const int64_t inner = static_cast<int64_t>(train.images.dim(2)) * train.images.dim(3);
  train.mean.assign(static_cast<size_t>(c), 0.0f);
  train.stddev.assign(static_cast<size_t>(c), 1.0f);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    int64_t count = 0;
    for (int64_t n = 0; n < train.size(); ++n) {
      const float* p = train.images.data() + (n * c + ch) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        sum += p[i];
        ++count;
      }
    }
    double mean = sum / static_cast<double>(count);
    for (int64_t n = 0; n < train.size(); ++n) {
      const float* p = train.images.data() + (n * c + ch) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        double d = p[i] - mean;
        sq += d * d;
      }
    }
    double sd = std::sqrt(sq / static_cast<double>(count));
    if (sd < 1e-8) sd = 1.0;
    train.mean[static_cast<size_t>(ch)] = static_cast<float>(mean);
    train.stddev[static_cast<size_t>(ch)] = static_cast<float>(sd);
  }
  test.mean = train.mean;
  test.stddev = train.stddev;
  for (Dataset* ds : {&train, &test}) {
    for (int64_t n = 0; n < ds->size(); ++n) {
      for (int ch = 0; ch < c; ++ch) {
        float* p = ds->images.data() + (n * c + ch) * inner;
        float m = ds->mean[static_cast<size_t>(ch)];
        float s = ds->stddev[static_cast<size_t>(ch)];
        for (int64_t i = 0; i < inner; ++i) p[i] = (p[i] - m) / s;
      }
    }
  }
}

Dataset idx_split(const std::string& dir, const std::string& image_file,
                  const std::string& label_file, const std::string& split) {
  std::string img_path = dir + "/" + image_file;
  std::string lbl_path = dir + "/" + label_file;
  std::vector<uint8_t> img_bytes = read_file(img_path);
  std::vector<uint8_t> lbl_bytes = read_file(lbl_path);
  IdxImages img = parse_idx_images(img_bytes, img_path);
  std::vector<int> labels = parse_idx_labels(lbl_bytes, lbl_path);
  require(labels.size() == img.count, ErrorCategory::format,
          dir + ": image/label count mismatch: " + std::to_string(img.count) + " images vs " +
              std::to_string(labels.size()) + " labels");
  Dataset ds;
  ds.kind = "mnist";
  ds.split = split;
  ds.class_count = 10;
  ds.labels = std::move(labels);
  for (int l : ds.labels) {
    require(l >= 0 && l < 10, ErrorCategory::format, dir + ": label out of range 0..9");
  }
  ds.images = Tensor({static_cast<int>(img.count), 1, static_cast<int>(img.rows),
                      static_cast<int>(img.cols)});
  const int64_t total = ds.images.numel();
  for (int64_t i = 0; i < total; ++i) {
    ds.images[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  }
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> load_mnist(const std::string& dir) {
  Dataset train = idx_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train");
  Dataset test = idx_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "test");
  normalize_pair(train, test);
  return {std::move(train), std::move(test)};
}

namespace {

constexpr int64_t kCifarRecord = 3073;  // 1 label byte + 3*32*32 pixels

void append_cifar_batch(Dataset& ds, const std::string& path) {
  std::vector<uint8_t> bytes = read_file(path);
  require(!bytes.empty() && bytes.size() % kCifarRecord == 0, ErrorCategory::format,
          path + ": record-size mismatch: " + std::to_string(bytes.size()) +
              " bytes is not a multiple of " + std::to_string(kCifarRecord));
  int64_t records = static_cast<int64_t>(bytes.size()) / kCifarRecord;
  size_t base_n = ds.labels.size();
  std::vector<float> data = std::move(ds.images.storage());
  data.resize((base_n + static_cast<size_t>(records)) * 3 * 32 * 32);
  for (int64_t r = 0; r < records; ++r) {
    const uint8_t* rec = bytes.data() + r * kCifarRecord;
    require(rec[0] < 10, ErrorCategory::format, path + ": label byte out of range 0..9");
    ds.labels.push_back(rec[0]);
    float* dst = data.data() + (base_n + static_cast<size_t>(r)) * 3 * 32 * 32;
    for (int64_t i = 0; i < 3 * 32 * 32; ++i) {
      dst[i] = static_cast<float>(rec[1 + i]) / 255.0f;
    }
  }
  ds.images = Tensor({static_cast<int>(base_n + static_cast<size_t>(records)), 3, 32, 32},
                     std::move(data));
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  Dataset train, test;
  for (Dataset* ds : {&train, &test}) {
    ds->kind = "cifar10";
    ds->class_count = 10;
    ds->images = Tensor({0, 3, 32, 32});
  }
  train.split = "train";
  test.split = "test";
  for (int b = 1; b <= 5; ++b) {
    append_cifar_batch(train, dir + "/data_batch_" + std::to_string(b) + ".bin");
  }
  append_cifar_batch(test, dir + "/test_batch.bin");
  normalize_pair(train, test);
  return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> make_synthetic(int classes, int n_train, int n_test, int c, int h,
                                           int w, uint64_t seed, double noise) {
  require(classes >= 2 && n_train >= classes && n_test >= 1, ErrorCategory::usage,
          "make_synthetic: need >= 2 classes and enough samples");
  require(c >= 1 && h >= 4 && w >= 4, ErrorCategory::usage, "make_synthetic: image too small");

  // Class prototypes: a few Gaussian blobs at class-specific positions.
  std::vector<std::vector<float>> prototypes(static_cast<size_t>(classes));
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int k = 0; k < classes; ++k) {
    Rng rng(split_seed(seed, 0xB10B, static_cast<uint64_t>(k)));
    std::vector<float>& proto = prototypes[static_cast<size_t>(k)];
    proto.assign(static_cast<size_t>(c) * plane, 0.0f);
    const int blobs = 3;
    for (int b = 0; b < blobs; ++b) {
      double cy = 2.0 + rng.uniform() * (h - 4);
      double cx = 2.0 + rng.uniform() * (w - 4);
      double amp = 0.6 + 0.4 * rng.uniform();
      double sigma = 1.0 + rng.uniform() * 1.5;
      int ch = static_cast<int>(rng.uniform_int(c));
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          proto[static_cast<size_t>(ch * plane + y * w + x)] +=
              static_cast<float>(amp * std::exp(-d2 / (2.0 * sigma * sigma)));
        }
      }
    }
  }

  auto render = [&](Dataset& ds, int n, uint64_t tag) {
    ds.kind = "synthetic";
    ds.class_count = classes;
    ds.images = Tensor({n, c, h, w});
    ds.labels.resize(static_cast<size_t>(n));
    Rng rng(split_seed(seed, tag));
    for (int i = 0; i < n; ++i) {
      int k = i % classes;  // balanced
      ds.labels[static_cast<size_t>(i)] = k;
      int dy = static_cast<int>(rng.uniform_int(5)) - 2;  // jitter in [-2, 2]
      int dx = static_cast<int>(rng.uniform_int(5)) - 2;
      const std::vector<float>& proto = prototypes[static_cast<size_t>(k)];
      float* dst = ds.images.data() + static_cast<int64_t>(i) * c * plane;
      for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            int sy = y - dy, sx = x - dx;
            float v = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                          ? proto[static_cast<size_t>(ch * plane + sy * w + sx)]
                          : 0.0f;
            dst[ch * plane + y * w + x] =
                v + static_cast<float>(noise * rng.gaussian());
          }
        }
      }
    }
  };

  Dataset train, test;
  train.split = "train";
  test.split = "test";
  render(train, n_train, 0x7EA1);
  render(test, n_test, 0x7E57);
  normalize_pair(train, test);
  return {std::move(train), std::move(test)};
}

void augment(Tensor& batch, const AugmentPolicy& policy, Rng& rng) {
  require(batch.rank() == 4, ErrorCategory::shape, "augment expects NxCxHxW");
  const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<float> scratch(static_cast<size_t>(c) * plane);
  for (int i = 0; i < n; ++i) {
    bool flip = policy.flip && rng.uniform() < 0.5;
    int oy = 0, ox = 0;
    if (policy.pad > 0) {
      oy = static_cast<int>(rng.uniform_int(2 * policy.pad + 1));
      ox = static_cast<int>(rng.uniform_int(2 * policy.pad + 1));
    }
    if (!flip && policy.pad == 0) continue;
    float* img = batch.data() + static_cast<int64_t>(i) * c * plane;
    std::memcpy(scratch.data(), img, scratch.size() * sizeof(float));
    for (int ch = 0; ch < c; ++ch) {
      const float* src = scratch.data() + static_cast<int64_t>(ch) * plane;
      float* dst = img + static_cast<int64_t>(ch) * plane;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          // position in the padded image, then back into source coordinates
          int sy = y + oy - policy.pad;
          int sx = x + ox - policy.pad;
          float v = 0.0f;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
            int fx = flip ? (w - 1 - sx) : sx;
            v = src[static_cast<int64_t>(sy) * w + fx];
          }
          dst[static_cast<int64_t>(y) * w + x] = v;
        }
      }
    }
  }
}

void gather_batch(const Dataset& ds, const std::vector<int64_t>& indices, int64_t begin,
                  int64_t count, Tensor* images, std::vector<int>* labels) {
  const int c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
  const int64_t sample = static_cast<int64_t>(c) * h * w;
  *images = Tensor({static_cast<int>(count), c, h, w});
  labels->resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    int64_t src = indices[static_cast<size_t>(begin + i)];
    std::memcpy(images->data() + i * sample, ds.images.data() + src * sample,
                static_cast<size_t>(sample) * sizeof(float));
    (*labels)[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(src)];
  }
}

uint64_t image_checksum(const Dataset& ds, int64_t index) {
  const int64_t sample = ds.images.numel() / ds.size();
  const uint8_t* bytes =
      reinterpret_cast<const uint8_t*>(ds.images.data() + index * sample);
  uint64_t hash = 1469598103934665603ULL;
  for (int64_t i = 0; i < sample * static_cast<int64_t>(sizeof(float)); ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

}  // namespace lpnn
