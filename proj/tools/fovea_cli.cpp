// Command-line entry points: dataset generation, training, evaluation,
// ablation sweeps, episode visualization and the compute benchmark.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fovea/benchmark.hpp"
#include "fovea/dataset.hpp"
#include "fovea/ini.hpp"
#include "fovea/metrics.hpp"
#include "fovea/network.hpp"
#include "fovea/training.hpp"
#include "fovea/visualize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fovea;

namespace {

constexpr int kOk = 0;
constexpr int kUsageError = 1;
constexpr int kDataError = 2;
constexpr int kRuntimeError = 3;

// Every command records its inputs next to its outputs.
void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& kv) {
  fs::create_directories(out_dir);
  json j;
  j["command"] = command;
  for (const auto& [k, v] : kv) j[k] = v;
  std::ofstream out(out_dir / "run_manifest.json");
  out << j.dump(2) << "\n";
}

using DataError = fovea::DatasetError;

int cmd_dataset(const std::string& kind, const std::string& split,
                std::uint64_t seed, const std::string& out,
                const std::string& digits_path, int count) {
  const std::uint64_t split_id = split == "train" ? 0 : 1;
  const int default_count = split == "train" ? 60000 : 10000;
  const int n = count > 0 ? count : default_count;

  Dataset source;
  const Dataset* source_ptr = nullptr;
  if (kind != "digits" && !digits_path.empty()) {
    source = load_digit_source(digits_path, split);
    if (count > 0 && static_cast<int>(source.size()) > count)
      source.resize(count);
    source_ptr = &source;
  }

  Dataset ds;
  if (kind == "digits") {
    ds = synthesize_digit_corpus(n, derive_seed(seed, split_id + 100),
                                 "digit-" + split);
  } else if (kind == "mso" || kind == "msno" || kind == "ct100") {
    if (!source_ptr)
      std::cout << "no --digits path given; synthesizing " << n
                << " source digits" << std::endl;
    ds = build_benchmark_dataset(kind, split, seed, n, source_ptr);
  } else {
    std::cerr << "unknown dataset kind: " << kind << std::endl;
    return kUsageError;
  }

  save_dataset(ds, out);
  write_manifest(out, "dataset",
                 {{"kind", kind},
                  {"split", split},
                  {"seed", std::to_string(seed)},
                  {"count", std::to_string(ds.size())},
                  {"digits", digits_path}});
  std::cout << "wrote " << ds.size() << " records to " << out << std::endl;
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              std::int64_t seed_override) {
  if (!fs::exists(config_path)) {
    std::cerr << "missing config file: " << config_path << "\n"
              << "usage: fovea train --config <path> [--out DIR] [--seed N]"
              << std::endl;
    return kUsageError;
  }
  TrainConfig cfg = TrainConfig::from_ini(IniFile::load(config_path));
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

  write_manifest(cfg.out_dir, "train",
                 {{"config", config_path},
                  {"config_digest", cfg.digest()},
                  {"seed", std::to_string(cfg.seed)}});
  TrainResult res = train(cfg);
  std::cout << "checkpoint: " << res.checkpoint.string() << std::endl;
  if (res.eval_report) {
    std::cout << "mean_iou = " << res.eval_report->mean_iou << "\n";
    if (res.eval_report->error_rate)
      std::cout << "error_rate = " << *res.eval_report->error_rate << "\n";
    if (res.eval_report->map)
      std::cout << "map = " << *res.eval_report->map << "\n";
  }
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_dir,
             int T, const std::string& out, int threads) {
  CheckpointMeta meta;
  Model model = load_checkpoint(ckpt_path, &meta);
  Dataset ds;
  try {
    ds = load_dataset(dataset_dir);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const int steps = T > 0 ? T : meta.steps_T;
  MetricsReport rep = evaluate(model, ds, steps, threads);
  write_report(rep, out);
  write_manifest(out, "eval",
                 {{"checkpoint", ckpt_path},
                  {"dataset", dataset_dir},
                  {"T", std::to_string(steps)},
                  {"config_digest", rep.config_digest}});
  std::cout << "mean_iou = " << rep.mean_iou << "\n";
  if (rep.error_rate) std::cout << "error_rate = " << *rep.error_rate << "\n";
  if (rep.map) std::cout << "map = " << *rep.map << "\n";
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::string& values_csv, const std::string& out_override) {
  if (!fs::exists(config_path)) {
    std::cerr << "missing config file: " << config_path << std::endl;
    return kUsageError;
  }
  TrainConfig base = TrainConfig::from_ini(IniFile::load(config_path));
  if (!out_override.empty()) base.out_dir = out_override;
  std::vector<std::string> values;
  std::stringstream ss(values_csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) values.push_back(tok);

  write_manifest(base.out_dir, "sweep",
                 {{"config", config_path},
                  {"axis", axis},
                  {"values", values_csv},
                  {"config_digest", base.digest()}});
  auto entries = ablation_sweep(base, axis, values);
  std::cout << axis << "  mean_iou  error_rate  map\n";
  for (const auto& e : entries) {
    std::cout << e.value << "  " << e.report.mean_iou << "  ";
    if (e.report.error_rate) std::cout << *e.report.error_rate;
    std::cout << "  ";
    if (e.report.map) std::cout << *e.report.map;
    std::cout << "\n";
  }
  return kOk;
}

int cmd_visualize(const std::string& ckpt_path, const std::string& dataset_dir,
                  int k, int T, const std::string& out, int scale) {
  CheckpointMeta meta;
  Model model = load_checkpoint(ckpt_path, &meta);
  Dataset ds;
  try {
    ds = load_dataset(dataset_dir);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  if (model.config().channels != ds.front().pixels.c)
    throw DataError("checkpoint channels do not match the dataset");
  const int steps = T > 0 ? T : meta.steps_T;
  auto files = visualize_episodes(model, ds, k, steps, out, scale);
  write_manifest(out, "visualize",
                 {{"checkpoint", ckpt_path},
                  {"dataset", dataset_dir},
                  {"k", std::to_string(k)},
                  {"T", std::to_string(steps)}});
  for (const auto& f : files) std::cout << f.string() << "\n";
  return kOk;
}

int cmd_benchmark(const std::string& ckpt_path, const std::string& sizes_csv,
                  int T, const std::string& out) {
  CheckpointMeta meta;
  Model model = load_checkpoint(ckpt_path, &meta);
  std::vector<int> sizes;
  std::stringstream ss(sizes_csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) sizes.push_back(std::stoi(tok));
  const int steps = T > 0 ? T : meta.steps_T;

  auto rows = run_benchmark(model, steps, sizes);
  fs::create_directories(out);
  write_benchmark_csv(rows, fs::path(out) / "benchmark.csv");
  write_manifest(out, "benchmark",
                 {{"checkpoint", ckpt_path},
                  {"sizes", sizes_csv},
                  {"T", std::to_string(steps)}});
  std::cout << "side  counted_macs  episode_s  global/local\n";
  for (const auto& r : rows)
    std::cout << r.image_side << "  " << r.counted_macs << "  "
              << r.episode_seconds << "  " << r.global_local_ratio << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent-glimpse object detection toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 7;
  std::string out = "out";

  // dataset
  auto* dataset = app.add_subcommand("dataset", "generate or convert datasets");
  std::string kind, split = "train", digits_path;
  int count = 0;
  dataset->add_option("kind", kind, "mso | msno | ct100 | digits")->required();
  dataset->add_option("--split", split, "train | test")
      ->check(CLI::IsMember({"train", "test"}));
  dataset->add_option("--seed", seed, "generation seed");
  dataset->add_option("--out", out, "output directory")->required();
  dataset->add_option("--digits", digits_path,
                      "source digit corpus (dataset dir or idx-ubyte dir)");
  dataset->add_option("--count", count, "record limit (0 = full split)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a config");
  std::string config_path, train_out;
  std::int64_t seed_override = -1;
  train_cmd->add_option("--config", config_path, "training config (ini)")
      ->required();
  train_cmd->add_option("--out", train_out, "override train.out_dir");
  train_cmd->add_option("--seed", seed_override, "override train.seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt, dataset_dir, eval_out = "eval_out";
  int T = 0, threads = 0;
  eval_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--dataset", dataset_dir, "dataset directory")
      ->required();
  eval_cmd->add_option("--T", T, "episode steps (default: from checkpoint)");
  eval_cmd->add_option("--out", eval_out, "report directory");
  eval_cmd->add_option("--threads", threads, "worker threads (0 = all)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "train along one ablation axis");
  std::string axis, values_csv, sweep_out;
  sweep_cmd->add_option("--config", config_path, "base training config (ini)")
      ->required();
  sweep_cmd->add_option("--axis", axis, "r | n | T | fusion | strategy")
      ->required();
  sweep_cmd->add_option("--values", values_csv, "comma-separated values")
      ->required();
  sweep_cmd->add_option("--out", sweep_out, "override train.out_dir");

  // visualize
  auto* vis_cmd = app.add_subcommand("visualize", "render episode overlays");
  int k = 3, scale = 4;
  std::string vis_out = "viz";
  vis_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  vis_cmd->add_option("--dataset", dataset_dir, "dataset directory")->required();
  vis_cmd->add_option("-k,--records", k, "number of records to draw");
  vis_cmd->add_option("--T", T, "episode steps (default: from checkpoint)");
  vis_cmd->add_option("--out", vis_out, "output directory");
  vis_cmd->add_option("--scale", scale, "upscale factor for overlays");

  // benchmark
  auto* bench_cmd = app.add_subcommand("benchmark", "episode compute scaling");
  std::string sizes_csv = "56,200,800", bench_out = "bench";
  bench_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  bench_cmd->add_option("--sizes", sizes_csv, "comma-separated image sides");
  bench_cmd->add_option("--T", T, "episode steps (default: from checkpoint)");
  bench_cmd->add_option("--out", bench_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints help or the parse error
    return e.get_name() == "CallForHelp" ? kOk : kUsageError;
  }

  try {
    if (dataset->parsed())
      return cmd_dataset(kind, split, seed, out, digits_path, count);
    if (train_cmd->parsed())
      return cmd_train(config_path, train_out, seed_override);
    if (eval_cmd->parsed())
      return cmd_eval(ckpt, dataset_dir, T, eval_out, threads);
    if (sweep_cmd->parsed())
      return cmd_sweep(config_path, axis, values_csv, sweep_out);
    if (vis_cmd->parsed())
      return cmd_visualize(ckpt, dataset_dir, k, T, vis_out, scale);
    if (bench_cmd->parsed())
      return cmd_benchmark(ckpt, sizes_csv, T, bench_out);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntimeError;
  }
  return kUsageError;
}
