// lpnn command-line front end: quantizer design, training, evaluation,
// kernel benchmarking, and table export.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "lpnn/bitkernels.hpp"
#include "lpnn/data.hpp"
#include "lpnn/ops.hpp"
#include "lpnn/quantizer.hpp"
#include "lpnn/trainer.hpp"

namespace {

using namespace lpnn;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return 2;
    case ErrorCategory::config: return 2;
    case ErrorCategory::io: return 3;
    case ErrorCategory::format: return 4;
    case ErrorCategory::shape: return 4;
    case ErrorCategory::numeric: return 5;
  }
  return 1;
}

void print_spec(const QuantizerSpec& spec) {
  std::printf("m: %d  uniform: %s  mse: %.9g\n", spec.m(), spec.uniform ? "yes" : "no",
              spec.mse);
  if (spec.uniform) std::printf("delta: %.17g\n", spec.delta);
  std::printf("levels:");
  for (double q : spec.levels) std::printf(" %.17g", q);
  std::printf("\nthresholds:");
  for (double t : spec.thresholds) {
    if (std::isinf(t)) {
      std::printf(" inf");
    } else {
      std::printf(" %.17g", t);
    }
  }
  std::printf("\n");
}

int cmd_design(int m, bool uniform, int64_t samples, uint64_t seed, const std::string& out) {
  require(m >= 1 && m <= 15, ErrorCategory::usage,
          "--levels must be in [1, 15], got " + std::to_string(m));
  require(samples >= 10000, ErrorCategory::usage,
          "--samples must be >= 10000, got " + std::to_string(samples));
  QuantizerSpec spec = design_hwgq(seed, samples, m, uniform);
  print_spec(spec);
  if (!out.empty()) {
    save_quantizer(spec, out);
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

int cmd_train(const std::string& config_path, bool deterministic_flag,
              const std::string& resume, const std::string& run_dir_override) {
  RunConfig cfg = load_run_config(config_path);
  if (deterministic_flag) cfg.train.deterministic = true;
  if (!run_dir_override.empty()) cfg.run_dir = run_dir_override;
  if (const char* root = std::getenv("LPNN_RUN_ROOT")) {
    cfg.run_dir = std::string(root) + "/" + cfg.run_dir;
  }
  auto [train_ds, test_ds] = load_run_dataset(cfg);
  TrainResult res = train(cfg, train_ds, test_ds, resume);
  std::printf("run dir: %s\n", cfg.run_dir.c_str());
  std::printf("iters: %lld%s\n", static_cast<long long>(res.completed_iters),
              res.diverged ? " (diverged; last good state kept)" : "");
  std::printf("final test top-1: %.4f  best: %.4f\n", res.final_test_top1,
              res.best_test_top1);
  std::printf("checkpoints: %s, %s\n", res.best_ckpt_path.c_str(),
              res.final_ckpt_path.c_str());
  return res.diverged ? 5 : 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_dir,
             const std::string& split, bool packed) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = run_config_from_json_text(ckpt.meta.run_config_json);
  if (!dataset_dir.empty() && dataset_dir != "-") cfg.dataset_dir = dataset_dir;
  auto [train_ds, test_ds] = load_run_dataset(cfg);
  const Dataset& ds = split == "train" ? train_ds : test_ds;
  require(ds.class_count == ckpt.meta.class_count, ErrorCategory::usage,
          "dataset class count " + std::to_string(ds.class_count) +
              " does not match checkpoint (" + std::to_string(ckpt.meta.class_count) + ")");
  QuantizerSpec quant = quantizer_from_json(ckpt.meta.quantizer_json);
  Network net = build_network(cfg.network, quant, cfg.train.backward_mode, cfg.train.seed);
  restore_network(net, ckpt);
  net.set_packed_inference(packed);
  EvalResult r = evaluate_network(net, ds);
  std::printf("split: %s  n: %lld\n", split.c_str(), static_cast<long long>(ds.size()));
  std::printf("top-1: %.9g\n", r.top1);
  if (r.has_top5) std::printf("top-5: %.9g\n", r.top5);
  return 0;
}

int cmd_bench(int64_t min_size, int64_t max_size, const std::string& out, uint64_t seed) {
  require(min_size >= 1 && min_size <= max_size, ErrorCategory::usage,
          "need 1 <= min-size <= max-size");
  std::vector<int64_t> sizes;
  for (int64_t s = min_size; s < max_size; s *= 4) sizes.push_back(s);
  sizes.push_back(max_size);
  std::vector<BenchRow> rows = bench_kernels(sizes, seed);
  std::fputs(bench_table(rows).c_str(), stdout);
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    require(f.good(), ErrorCategory::io, "cannot open for writing: " + out);
    f << bench_csv(rows);
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

int cmd_export_tables(const std::string& ckpt_path, const std::string& table_path,
                      const std::string& out) {
  QuantizerSpec spec;
  if (!ckpt_path.empty()) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    spec = quantizer_from_json(ckpt.meta.quantizer_json);
  } else {
    require(!table_path.empty(), ErrorCategory::usage,
            "export-tables needs --checkpoint or --table");
    spec = load_quantizer(table_path);
  }
  print_spec(spec);
  if (!out.empty()) {
    save_quantizer(spec, out);
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"low-precision network toolkit: half-wave Gaussian quantization, binary "
               "weights, XNOR kernels"};
  app.require_subcommand(1);

  // design-quantizer
  int m = 2;
  bool uniform = false, nonuniform = false;
  int64_t samples = 1000000;
  uint64_t seed = 7;
  std::string out_path;
  auto* design = app.add_subcommand("design-quantizer",
                                    "design an MSE-optimal half-wave Gaussian quantizer");
  design->add_option("--levels", m, "positive level count m (1..15)")->required();
  auto* uopt = design->add_flag("--uniform", uniform, "constrain levels to i*delta");
  design->add_flag("--nonuniform", nonuniform, "unconstrained Lloyd design (default)")
      ->excludes(uopt);
  design->add_option("--samples", samples, "Gaussian design samples (>= 10000)");
  design->add_option("--seed", seed, "rng seed for the design corpus");
  design->add_option("--out", out_path, "output JSON path");

  // train
  std::string config_path, resume_path, run_dir_override;
  bool deterministic = false;
  auto* train_cmd = app.add_subcommand("train", "train a network from a run config");
  train_cmd->add_option("--config", config_path, "run config JSON")->required();
  train_cmd->add_flag("--deterministic", deterministic, "force deterministic mode");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--run-dir", run_dir_override, "override the config's run_dir");

  // eval
  std::string ckpt_path, dataset_dir, split = "test";
  bool packed = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  eval_cmd->add_option("--dataset", dataset_dir, "dataset directory ('-' = from config)");
  eval_cmd->add_option("--split", split, "train|test")
      ->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_flag("--packed", packed, "use XNOR-popcount inference where eligible");

  // bench
  int64_t min_size = 64, max_size = 1048576;
  uint64_t bench_seed = 42;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "benchmark packed vs float dot kernels");
  bench_cmd->add_option("--min-size", min_size, "smallest vector length");
  bench_cmd->add_option("--max-size", max_size, "largest vector length");
  bench_cmd->add_option("--out", bench_out, "CSV output path");
  bench_cmd->add_option("--seed", bench_seed, "rng seed for bench data");

  // export-tables
  std::string exp_ckpt, exp_table, exp_out;
  auto* export_cmd =
      app.add_subcommand("export-tables", "re-emit a quantizer table from a checkpoint or file");
  export_cmd->add_option("--checkpoint", exp_ckpt, "checkpoint to extract the table from");
  export_cmd->add_option("--table", exp_table, "existing table JSON to normalize");
  export_cmd->add_option("--out", exp_out, "output JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fflush(stdout);
    std::fprintf(stderr, "error:usage: %s\n", e.what());
    return 2;
  }

  try {
    if (app.got_subcommand(design)) {
      return cmd_design(m, uniform, samples, seed, out_path);
    }
    if (app.got_subcommand(train_cmd)) {
      return cmd_train(config_path, deterministic, resume_path, run_dir_override);
    }
    if (app.got_subcommand(eval_cmd)) {
      return cmd_eval(ckpt_path, dataset_dir, split, packed);
    }
    if (app.got_subcommand(bench_cmd)) {
      return cmd_bench(min_size, max_size, bench_out, bench_seed);
    }
    if (app.got_subcommand(export_cmd)) {
      return cmd_export_tables(exp_ckpt, exp_table, exp_out);
    }
  } catch (const lpnn::Error& e) {
    std::fflush(stdout);
    std::fprintf(stderr, "error:%s: %s\n", lpnn::to_string(e.category()), e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::fflush(stdout);
    std::fprintf(stderr, "error:internal: %s\n", e.what());
    return 1;
  }
  return 2;
}
