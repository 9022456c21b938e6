#include "lpnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace lpnn {

double lr_at(const TrainConfig& config, int64_t iter) {
  require(config.base_lr > 0.0, ErrorCategory::config, "base_lr must be > 0");
  require(config.total_iters >= 1, ErrorCategory::config, "total_iters must be >= 1");
  require(iter >= 0 && iter < config.total_iters, ErrorCategory::usage,
          "lr_at: iter " + std::to_string(iter) + " outside [0, " +
              std::to_string(config.total_iters) + ")");
  if (config.schedule.kind == Schedule::Kind::step) {
    require(config.schedule.drop_every >= 1, ErrorCategory::config,
            "step schedule needs drop_every >= 1");
    double lr = config.base_lr;
    int64_t drops = iter / config.schedule.drop_every;
    for (int64_t i = 0; i < drops; ++i) lr *= config.schedule.factor;
    return lr;
  }
  double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(config.total_iters);
  return config.base_lr * std::pow(frac, config.schedule.power);
}

void sgd_step(std::vector<Param>& params, SgdState& state, double lr, double momentum,
              double weight_decay) {
  // Validate every gradient before touching anything: a rejected step must
  // leave parameters and momentum intact.
  for (const Param& p : params) {
    if (!p.grad->all_finite()) {
      fail(ErrorCategory::numeric, "non-finite gradient in " + p.name + "; step rejected");
    }
  }
  const float m = static_cast<float>(momentum);
  const float eta = static_cast<float>(lr);
  for (Param& p : params) {
    Tensor& v = state.velocity.try_emplace(p.name, p.value->shape()).first->second;
    const float wd = p.decay ? static_cast<float>(weight_decay) : 0.0f;
    float* vel = v.data();
    float* w = p.value->data();
    const float* g = p.grad->data();
    for (int64_t i = 0; i < p.value->numel(); ++i) {
      vel[i] = m * vel[i] + (g[i] + wd * w[i]);
      w[i] -= eta * vel[i];
    }
  }
}

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require(logits.rank() == 2, ErrorCategory::shape, "logits must be NxK");
  const int n = logits.dim(0), k = logits.dim(1);
  require(static_cast<size_t>(n) == labels.size(), ErrorCategory::shape,
          "logits/labels count mismatch");
  LossResult res;
  res.d_logits = Tensor({n, k});
  res.correct_top1 = 0;
  res.correct_top5 = 0;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<int64_t>(i) * k;
    int label = labels[static_cast<size_t>(i)];
    require(label >= 0 && label < k, ErrorCategory::usage, "label out of range");
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    double log_sum = std::log(sum) + mx;
    total += log_sum - row[label];
    float* d = res.d_logits.data() + static_cast<int64_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      double p = std::exp(static_cast<double>(row[j]) - log_sum);
      d[j] = static_cast<float>((p - (j == label ? 1.0 : 0.0)) / n);
    }
    // rank with deterministic tie-break (higher logit first, lower index first)
    int rank = 0;
    for (int j = 0; j < k; ++j) {
      if (row[j] > row[label] || (row[j] == row[label] && j < label)) ++rank;
    }
    if (rank < 1) ++res.correct_top1;
    if (rank < 5) ++res.correct_top5;
  }
  res.loss = total / n;
  return res;
}

EvalResult evaluate_network(Network& net, const Dataset& ds, int batch_size) {
  require(ds.class_count == net.class_count(), ErrorCategory::usage,
          "dataset class count " + std::to_string(ds.class_count) +
              " does not match network classes " + std::to_string(net.class_count()));
  EvalResult r;
  r.has_top5 = ds.class_count >= 5;
  int64_t n = ds.size();
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  int64_t top1 = 0, top5 = 0;
  double loss_sum = 0.0;
  for (int64_t begin = 0; begin < n; begin += batch_size) {
    int64_t count = std::min<int64_t>(batch_size, n - begin);
    Tensor images;
    std::vector<int> labels;
    gather_batch(ds, order, begin, count, &images, &labels);
    Tensor logits = net.forward(images, /*training=*/false);
    LossResult l = softmax_cross_entropy(logits, labels);
    loss_sum += l.loss * static_cast<double>(count);
    top1 += l.correct_top1;
    top5 += l.correct_top5;
  }
  r.loss = loss_sum / static_cast<double>(n);
  r.top1 = static_cast<double>(top1) / static_cast<double>(n);
  r.top5 = static_cast<double>(top5) / static_cast<double>(n);
  return r;
}

// ---------------------------------------------------------------------------
// Run config

namespace {

Schedule schedule_from_json(const nlohmann::json& j) {
  Schedule s;
  std::string kind = j.value("kind", std::string("step"));
  if (kind == "step") {
    s.kind = Schedule::Kind::step;
    s.drop_every = j.value("drop_every", int64_t{0});
    s.factor = j.value("factor", 0.1);
  } else if (kind == "polynomial") {
    s.kind = Schedule::Kind::polynomial;
    s.power = j.value("power", 1.0);
  } else {
    fail(ErrorCategory::config, "train.schedule.kind: must be step|polynomial, got " + kind);
  }
  return s;
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, std::string("run config JSON parse error: ") + e.what());
  }
  RunConfig cfg;
  cfg.raw_json = text;
  try {
    require(j.contains("network"), ErrorCategory::config, "network: missing section");
    cfg.network = network_spec_from_json_text(j["network"].dump());
    const auto& t = j.at("train");
    cfg.train.batch_size = t.value("batch_size", 100);
    require(cfg.train.batch_size >= 1, ErrorCategory::config, "train.batch_size: must be >= 1");
    cfg.train.base_lr = t.value("base_lr", 0.01);
    require(cfg.train.base_lr > 0.0, ErrorCategory::config, "train.base_lr: must be > 0");
    cfg.train.momentum = t.value("momentum", 0.9);
    require(cfg.train.momentum >= 0.0 && cfg.train.momentum < 1.0, ErrorCategory::config,
            "train.momentum: must be in [0,1)");
    cfg.train.weight_decay = t.value("weight_decay", 5e-4);
    cfg.train.total_iters = t.value("total_iters", int64_t{1000});
    require(cfg.train.total_iters >= 1, ErrorCategory::config,
            "train.total_iters: must be >= 1");
    if (t.contains("schedule")) cfg.train.schedule = schedule_from_json(t["schedule"]);
    if (cfg.train.schedule.kind == Schedule::Kind::step && cfg.train.schedule.drop_every == 0) {
      // desk-scale default: divide by 10 every 40% of the run
      cfg.train.schedule.drop_every = std::max<int64_t>(1, cfg.train.total_iters * 2 / 5);
    }
    cfg.train.seed = t.value("seed", uint64_t{1});
    cfg.train.backward_mode = backward_mode_from_string(t.value("backward_mode", "clipped"));
    cfg.train.deterministic = t.value("deterministic", true);
    cfg.train.log_interval = t.value("log_interval", int64_t{50});
    cfg.train.eval_interval = t.value("eval_interval", int64_t{0});
    cfg.train.snapshot_every = t.value("snapshot_every", int64_t{0});
    if (t.contains("augment")) {
      const auto& a = t["augment"];
      cfg.train.augment_enabled = a.value("enabled", true);
      cfg.train.augment.flip = a.value("flip", true);
      cfg.train.augment.pad = a.value("pad", 0);
    }

    const auto& d = j.at("data");
    cfg.dataset_kind = d.value("dataset", std::string("synthetic"));
    require(cfg.dataset_kind == "mnist" || cfg.dataset_kind == "cifar10" ||
                cfg.dataset_kind == "synthetic",
            ErrorCategory::config, "data.dataset: must be mnist|cifar10|synthetic");
    cfg.dataset_dir = d.value("dir", std::string());
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      cfg.synthetic.classes = s.value("classes", 10);
      cfg.synthetic.n_train = s.value("n_train", 4000);
      cfg.synthetic.n_test = s.value("n_test", 1000);
      cfg.synthetic.c = s.value("channels", 1);
      cfg.synthetic.h = s.value("height", 16);
      cfg.synthetic.w = s.value("width", 16);
      cfg.synthetic.seed = s.value("seed", uint64_t{99});
      cfg.synthetic.noise = s.value("noise", 0.25);
    }

    cfg.quantizer_table = j.value("quantizer_table", std::string());
    if (j.contains("quantizer")) {
      const auto& q = j["quantizer"];
      cfg.quantizer.present = true;
      cfg.quantizer.m = q.value("levels", 2);
      cfg.quantizer.uniform = q.value("uniform", false);
      cfg.quantizer.samples = q.value("samples", int64_t{1000000});
      cfg.quantizer.seed = q.value("seed", uint64_t{7});
      require(cfg.quantizer.m >= 1 && cfg.quantizer.m <= 15, ErrorCategory::config,
              "quantizer.levels: must be in [1, 15]");
    }
    cfg.run_dir = j.value("run_dir", std::string("run"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::config, std::string("run config field error: ") + e.what());
  }

  bool wants_hwgq = false;
  for (const auto& l : cfg.network.layers) {
    if (l.activation == "hwgq") wants_hwgq = true;
  }
  require(!wants_hwgq || !cfg.quantizer_table.empty() || cfg.quantizer.present,
          ErrorCategory::config,
          "quantizer_table: required (or inline quantizer{}) when a layer uses hwgq");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return run_config_from_json_text(text);
}

std::pair<Dataset, Dataset> load_run_dataset(const RunConfig& cfg) {
  if (cfg.dataset_kind == "mnist") return load_mnist(cfg.dataset_dir);
  if (cfg.dataset_kind == "cifar10") return load_cifar10(cfg.dataset_dir);
  const auto& s = cfg.synthetic;
  return make_synthetic(s.classes, s.n_train, s.n_test, s.c, s.h, s.w, s.seed, s.noise);
}

QuantizerSpec resolve_quantizer(const RunConfig& cfg) {
  if (!cfg.quantizer_table.empty()) return load_quantizer(cfg.quantizer_table);
  if (cfg.quantizer.present) {
    return design_hwgq(cfg.quantizer.seed, cfg.quantizer.samples, cfg.quantizer.m,
                       cfg.quantizer.uniform);
  }
  // Networks without hwgq layers never evaluate the table; keep a valid stub.
  return design_hwgq(7, 10000, 2, false);
}

uint64_t fnv1a64(const std::string& text) {
  uint64_t hash = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string config_digest(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(cfg.raw_json)));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[] = "LPNNCKPT";
constexpr int kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require(in.good(), ErrorCategory::format, path + ": truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  require(name.size() < 65536, ErrorCategory::usage, "tensor name too long");
  write_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_u32(out, static_cast<uint32_t>(t.dim(i)));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

std::pair<std::string, Tensor> read_tensor(std::istream& in, const std::string& path) {
  uint32_t name_len = read_u32(in, path);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  uint32_t rank = read_u32(in, path);
  std::vector<int> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(read_u32(in, path));
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  require(in.good(), ErrorCategory::format, path + ": truncated tensor data");
  return {std::move(name), std::move(t)};
}

nlohmann::json meta_to_json(const CheckpointMeta& m) {
  nlohmann::json j;
  j["iteration"] = m.iteration;
  j["dataset_kind"] = m.dataset_kind;
  j["class_count"] = m.class_count;
  j["test_loss"] = m.test_loss;
  j["test_top1"] = m.test_top1;
  j["test_top5"] = m.test_top5;
  j["has_top5"] = m.has_top5;
  j["norm_mean"] = m.norm_mean;
  j["norm_std"] = m.norm_std;
  j["run_config"] = m.run_config_json;
  j["quantizer"] = m.quantizer_json;
  return j;
}

// Non-finite metrics (a diverged abort's final eval) dump as JSON null.
double metric_or_nan(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return j[key].get<double>();
}

void meta_from_json(const nlohmann::json& j, CheckpointMeta& m) {
  m.iteration = j.value("iteration", int64_t{0});
  m.dataset_kind = j.value("dataset_kind", std::string());
  m.class_count = j.value("class_count", 0);
  m.test_loss = metric_or_nan(j, "test_loss");
  m.test_top1 = metric_or_nan(j, "test_top1");
  m.test_top5 = metric_or_nan(j, "test_top5");
  m.has_top5 = j.value("has_top5", false);
  m.norm_mean = j.value("norm_mean", std::vector<float>{});
  m.norm_std = j.value("norm_std", std::vector<float>{});
  m.run_config_json = j.value("run_config", std::string());
  m.quantizer_json = j.value("quantizer", std::string());
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     std::vector<NamedTensor> state, const SgdState& opt) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCategory::io, "cannot open for writing: " + path);
  out << kMagic << " " << kVersion << " " << meta.digest << "\n";
  std::string meta_text = meta_to_json(meta).dump();
  write_u32(out, static_cast<uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  write_u32(out, static_cast<uint32_t>(state.size()));
  for (const NamedTensor& nt : state) write_tensor(out, nt.name, *nt.value);
  write_u32(out, static_cast<uint32_t>(opt.velocity.size()));
  for (const auto& [name, tensor] : opt.velocity) write_tensor(out, name, tensor);
  require(out.good(), ErrorCategory::io, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot open checkpoint: " + path);
  std::string header;
  std::getline(in, header);
  require(header.rfind(kMagic, 0) == 0, ErrorCategory::format,
          path + ": not a checkpoint (bad magic)");
  int version = 0;
  char digest[64] = {0};
  int fields = std::sscanf(header.c_str() + sizeof(kMagic), "%d %63s", &version, digest);
  require(fields == 2, ErrorCategory::format, path + ": malformed checkpoint header");
  require(version == kVersion, ErrorCategory::format,
          path + ": checkpoint version mismatch: file has " + std::to_string(version) +
              ", this build reads " + std::to_string(kVersion));
  Checkpoint ckpt;
  ckpt.meta.version = version;
  ckpt.meta.digest = digest;
  uint32_t meta_len = read_u32(in, path);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), meta_len);
  require(in.good(), ErrorCategory::format, path + ": truncated metadata");
  try {
    meta_from_json(nlohmann::json::parse(meta_text), ckpt.meta);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, path + ": metadata parse error: " + e.what());
  }
  uint32_t tensor_count = read_u32(in, path);
  for (uint32_t i = 0; i < tensor_count; ++i) {
    auto [name, tensor] = read_tensor(in, path);
    ckpt.tensors.emplace(std::move(name), std::move(tensor));
  }
  uint32_t vel_count = read_u32(in, path);
  for (uint32_t i = 0; i < vel_count; ++i) {
    auto [name, tensor] = read_tensor(in, path);
    ckpt.velocity.emplace(std::move(name), std::move(tensor));
  }
  return ckpt;
}

void restore_network(Network& net, const Checkpoint& ckpt) {
  std::vector<NamedTensor> state = net.state();
  require(state.size() == ckpt.tensors.size(), ErrorCategory::format,
          "checkpoint tensor count " + std::to_string(ckpt.tensors.size()) +
              " does not match network (" + std::to_string(state.size()) + ")");
  for (NamedTensor& nt : state) {
    auto it = ckpt.tensors.find(nt.name);
    require(it != ckpt.tensors.end(), ErrorCategory::format,
            "checkpoint missing tensor " + nt.name);
    require(it->second.shape() == nt.value->shape(), ErrorCategory::format,
            "checkpoint tensor " + nt.name + " has shape " + it->second.shape_str() +
                ", network expects " + nt.value->shape_str());
    *nt.value = it->second;
  }
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::string format_metric_row(int64_t iter, const char* split, double loss, double top1,
                              double top5, bool has_top5, double lr) {
  char buf[192];
  if (has_top5) {
    std::snprintf(buf, sizeof buf, "%lld,%s,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(iter), split, loss, top1, top5, lr);
  } else {
    std::snprintf(buf, sizeof buf, "%lld,%s,%.9g,%.9g,,%.9g\n",
                  static_cast<long long>(iter), split, loss, top1, lr);
  }
  return std::string(buf);
}

CheckpointMeta make_meta(const RunConfig& cfg, const QuantizerSpec& quant, int64_t iter,
                         const Dataset& train_ds, const EvalResult& test_metrics) {
  CheckpointMeta meta;
  meta.digest = config_digest(cfg);
  meta.run_config_json = cfg.raw_json;
  meta.quantizer_json = quantizer_to_json(quant);
  meta.iteration = iter;
  meta.dataset_kind = train_ds.kind;
  meta.class_count = train_ds.class_count;
  meta.test_loss = test_metrics.loss;
  meta.test_top1 = test_metrics.top1;
  meta.test_top5 = test_metrics.top5;
  meta.has_top5 = test_metrics.has_top5;
  meta.norm_mean = train_ds.mean;
  meta.norm_std = train_ds.stddev;
  return meta;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const Dataset& train_ds, const Dataset& test_ds,
                  const std::string& resume_path) {
  require(train_ds.split == "train" && test_ds.split == "test", ErrorCategory::usage,
          "train() needs a train and a test split");
  const TrainConfig& tc = cfg.train;
  QuantizerSpec quant = resolve_quantizer(cfg);
  Network net = build_network(cfg.network, quant, tc.backward_mode, tc.seed);
  require(net.class_count() == train_ds.class_count, ErrorCategory::config,
          "network classes " + std::to_string(net.class_count()) +
              " do not match dataset classes " + std::to_string(train_ds.class_count));

  std::filesystem::create_directories(cfg.run_dir);
  {
    std::ofstream copy(cfg.run_dir + "/config.json", std::ios::binary);
    copy << cfg.raw_json;
  }
  const std::string csv_path = cfg.run_dir + "/metrics.csv";
  const std::string best_path = cfg.run_dir + "/ckpt_best.lpnn";
  const std::string final_path = cfg.run_dir + "/ckpt_final.lpnn";

  SgdState opt;
  int64_t start_iter = 0;
  bool resumed = false;
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    require(ckpt.meta.digest == config_digest(cfg), ErrorCategory::config,
            "resume checkpoint was produced by a different config (digest mismatch)");
    restore_network(net, ckpt);
    opt.velocity = ckpt.velocity;
    start_iter = ckpt.meta.iteration;
    resumed = true;
  }

  const int64_t n = train_ds.size();
  const int64_t batches_per_epoch = std::max<int64_t>(1, n / tc.batch_size);
  const int64_t eval_every = tc.eval_interval > 0 ? tc.eval_interval : batches_per_epoch;

  std::ofstream csv(csv_path, resumed ? std::ios::binary | std::ios::app : std::ios::binary);
  require(csv.good(), ErrorCategory::io, "cannot open metrics csv: " + csv_path);
  if (!resumed) csv << "iter,split,loss,top1,top5,lr\n";

  TrainResult result;
  result.metrics_csv_path = csv_path;
  result.best_ckpt_path = best_path;
  result.final_ckpt_path = final_path;
  result.best_test_top1 = -1.0;

  EvalResult last_test;
  std::vector<int64_t> perm;
  int64_t perm_epoch = -1;
  double last_train_loss = 0.0;

  auto run_eval = [&](int64_t iter) {
    last_test = evaluate_network(net, test_ds);
    csv << format_metric_row(iter, "test", last_test.loss, last_test.top1, last_test.top5,
                             last_test.has_top5, iter < tc.total_iters ? lr_at(tc, iter) : 0.0);
    csv.flush();
    if (last_test.top1 > result.best_test_top1) {
      result.best_test_top1 = last_test.top1;
      save_checkpoint(best_path, make_meta(cfg, quant, iter, train_ds, last_test), net.state(),
                      opt);
    }
  };

  int64_t iter = start_iter;
  for (; iter < tc.total_iters; ++iter) {
    int64_t epoch = iter / batches_per_epoch;
    if (epoch != perm_epoch) {
      Rng order_rng(split_seed(tc.seed, 0x04DE4, static_cast<uint64_t>(epoch)));
      perm = order_rng.permutation(n);
      perm_epoch = epoch;
    }
    int64_t pos = (iter % batches_per_epoch) * tc.batch_size;
    int64_t count = std::min<int64_t>(tc.batch_size, n - pos);

    Tensor images;
    std::vector<int> labels;
    gather_batch(train_ds, perm, pos, count, &images, &labels);
    if (tc.augment_enabled) {
      Rng aug_rng(split_seed(tc.seed, 0xA4612E47, static_cast<uint64_t>(iter)));
      augment(images, tc.augment, aug_rng);
    }

    // Stash the full pre-step state (weights, batch-norm statistics,
    // momentum): the abort contract keeps the last finite state, and both the
    // forward pass (running stats) and the update can push values to
    // overflow.
    std::vector<NamedTensor> state = net.state();
    std::vector<Tensor> stash;
    stash.reserve(state.size());
    for (const NamedTensor& nt : state) stash.push_back(*nt.value);
    std::map<std::string, Tensor> velocity_stash = opt.velocity;
    auto restore = [&] {
      for (size_t si = 0; si < state.size(); ++si) *state[si].value = stash[si];
      opt.velocity = std::move(velocity_stash);
    };

    net.zero_grads();
    Tensor logits = net.forward(images, /*training=*/true, static_cast<uint64_t>(iter));
    LossResult loss = softmax_cross_entropy(logits, labels);
    if (!std::isfinite(loss.loss)) {
      restore();
      result.diverged = true;
      break;
    }
    last_train_loss = loss.loss;
    net.backward(loss.d_logits);

    double lr = lr_at(tc, iter);
    std::vector<Param> params = net.params();
    try {
      sgd_step(params, opt, lr, tc.momentum, tc.weight_decay);
    } catch (const Error&) {
      restore();  // non-finite gradient; the step itself left weights alone
      result.diverged = true;
      break;
    }
    bool blew_up = false;
    for (const NamedTensor& nt : state) {
      if (!nt.value->all_finite()) blew_up = true;
    }
    if (blew_up) {
      restore();
      result.diverged = true;
      break;
    }

    if ((iter + 1) % tc.log_interval == 0 || iter + 1 == tc.total_iters) {
      double top1 = static_cast<double>(loss.correct_top1) / count;
      double top5 = static_cast<double>(loss.correct_top5) / count;
      csv << format_metric_row(iter + 1, "train", loss.loss, top1, top5,
                               net.class_count() >= 5, lr);
    }
    if ((iter + 1) % eval_every == 0 && iter + 1 < tc.total_iters) {
      run_eval(iter + 1);
    }
    if (tc.snapshot_every > 0 && (iter + 1) % tc.snapshot_every == 0) {
      save_checkpoint(cfg.run_dir + "/ckpt_iter_" + std::to_string(iter + 1) + ".lpnn",
                      make_meta(cfg, quant, iter + 1, train_ds, last_test), net.state(), opt);
    }
  }

  result.completed_iters = iter;
  result.final_train_loss = last_train_loss;
  run_eval(iter);
  result.final_test_top1 = last_test.top1;
  save_checkpoint(final_path, make_meta(cfg, quant, iter, train_ds, last_test), net.state(),
                  opt);
  return result;
}

void recompute_bn_stats(Network& net, const Dataset& train_ds, int batch_size, int batches,
                        uint64_t seed) {
  net.begin_stat_collection();
  Rng order_rng(split_seed(seed, 0xB45747));
  std::vector<int64_t> perm = order_rng.permutation(train_ds.size());
  int64_t pos = 0;
  for (int b = 0; b < batches; ++b) {
    if (pos + batch_size > train_ds.size()) pos = 0;
    Tensor images;
    std::vector<int> labels;
    gather_batch(train_ds, perm, pos, batch_size, &images, &labels);
    pos += batch_size;
    net.forward(images, /*training=*/true, static_cast<uint64_t>(b));
  }
  net.end_stat_collection();
}

}  // namespace lpnn
