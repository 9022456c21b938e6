#ifndef LPNN_TRAINER_HPP_
#define LPNN_TRAINER_HPP_

#include <map>
#include <string>
#include <vector>

#include "lpnn/data.hpp"
#include "lpnn/network.hpp"
#include "lpnn/quantizer.hpp"

namespace lpnn {

struct Schedule {
  enum class Kind { step, polynomial };
  Kind kind = Kind::step;
  int64_t drop_every = 0;  // step: iterations between lr drops
  double factor = 0.1;     // step: multiplier at each drop
  double power = 1.0;      // polynomial: lr = base * (1 - iter/total)^power
};

struct TrainConfig {
  int batch_size = 100;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Schedule schedule;
  int64_t total_iters = 1000;
  uint64_t seed = 1;
  BackwardMode backward_mode = BackwardMode::clipped;
  bool deterministic = true;  // sequential data path, fixed reduction order
  int64_t log_interval = 50;
  int64_t eval_interval = 0;    // 0 = once per epoch-equivalent
  int64_t snapshot_every = 0;   // 0 = no periodic snapshots
  bool augment_enabled = false;
  AugmentPolicy augment;
};

// step: base_lr * factor^floor(iter/drop_every); polynomial: base_lr *
// (1 - iter/total_iters)^power. iter outside [0, total_iters) is rejected.
double lr_at(const TrainConfig& config, int64_t iter);

struct SgdState {
  std::map<std::string, Tensor> velocity;
};

// v <- momentum*v + (grad + wd*w); w <- w - lr*v, applied to master weights.
// Weight decay only touches params flagged `decay`. A non-finite gradient
// rejects the whole step (no partial update) naming the offending parameter.
void sgd_step(std::vector<Param>& params, SgdState& state, double lr, double momentum,
              double weight_decay);

struct LossResult {
  double loss;
  Tensor d_logits;
  int correct_top1;
  int correct_top5;
};

// Mean softmax cross-entropy over the batch; d_logits = (softmax - onehot)/N.
LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  bool has_top5 = false;  // reported when class_count >= 5
};

EvalResult evaluate_network(Network& net, const Dataset& ds, int batch_size = 256);

// One run config document: network + training + data + quantizer table.
struct RunConfig {
  NetworkSpec network;
  TrainConfig train;
  std::string dataset_kind = "synthetic";  // mnist | cifar10 | synthetic
  std::string dataset_dir;
  struct Synthetic {
    int classes = 10, n_train = 4000, n_test = 1000, c = 1, h = 16, w = 16;
    uint64_t seed = 99;
    double noise = 0.25;
  } synthetic;
  std::string quantizer_table;  // path to a designed table (preferred)
  struct InlineQuantizer {      // fallback: design at startup
    bool present = false;
    int m = 2;
    bool uniform = false;
    int64_t samples = 1000000;
    uint64_t seed = 7;
  } quantizer;
  std::string run_dir = "run";
  std::string raw_json;  // canonical config text; hashed into the digest
};

RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::pair<Dataset, Dataset> load_run_dataset(const RunConfig& cfg);
QuantizerSpec resolve_quantizer(const RunConfig& cfg);

uint64_t fnv1a64(const std::string& text);
std::string config_digest(const RunConfig& cfg);

// Versioned checkpoint container (see README for the byte layout).
struct CheckpointMeta {
  int version = 1;
  std::string digest;
  std::string run_config_json;
  std::string quantizer_json;
  int64_t iteration = 0;
  std::string dataset_kind;
  int class_count = 0;
  double test_loss = 0.0, test_top1 = 0.0, test_top5 = 0.0;
  bool has_top5 = false;
  std::vector<float> norm_mean, norm_std;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, Tensor> velocity;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     std::vector<NamedTensor> state, const SgdState& opt);
Checkpoint load_checkpoint(const std::string& path);
void restore_network(Network& net, const Checkpoint& ckpt);

struct TrainResult {
  std::string metrics_csv_path, final_ckpt_path, best_ckpt_path;
  double final_test_top1 = 0.0;
  double best_test_top1 = 0.0;
  double final_train_loss = 0.0;
  bool diverged = false;
  int64_t completed_iters = 0;
};

// Runs the configured number of mini-batch steps, logging train metrics each
// log_interval and test metrics each eval_interval to run_dir/metrics.csv,
// and writing ckpt_best.lpnn / ckpt_final.lpnn. A NaN loss aborts, keeping
// the last finite state. `resume_path` restores weights, optimizer state and
// the iteration counter.
TrainResult train(const RunConfig& cfg, const Dataset& train_ds, const Dataset& test_ds,
                  const std::string& resume_path = "");

// Batch-norm statistic refresh for the post-hoc quantization baseline:
// forwards `batches` training batches through the network (no learning) and
// replaces the running statistics with the averaged batch statistics.
void recompute_bn_stats(Network& net, const Dataset& train_ds, int batch_size, int batches,
                        uint64_t seed = 1);

}  // namespace lpnn

#endif  // LPNN_TRAINER_HPP_
