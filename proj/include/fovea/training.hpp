#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fovea/dataset.hpp"
#include "fovea/ini.hpp"
#include "fovea/losses.hpp"
#include "fovea/metrics.hpp"
#include "fovea/network.hpp"

namespace fovea {

struct OptimConfig {
  double lr = 1e-4;
  double lr_decay = 1.0;  // multiplicative, per epoch
  double grad_clip = 5.0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct TrainConfig {
  std::string train_dir;
  std::string eval_dir;  // optional; evaluated after training when set
  ModelConfig model;
  LossConfig loss;
  int steps_T = 10;
  double init_range = 0.3;
  OptimConfig optim;
  int batch = 64;
  int epochs = 10;
  std::uint64_t seed = 1;
  int eval_every = 0;     // epochs between mid-training evals, 0 = final only
  int threads = 0;        // 0 = hardware concurrency
  int limit_train = 0;    // 0 = use everything
  int limit_eval = 0;
  std::string out_dir = "run";

  static TrainConfig from_ini(const IniFile& ini);
  IniFile to_ini() const;
  // Identity of the experiment; excludes out_dir and threads.
  std::string digest() const;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::optional<MetricsReport> eval_report;
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
};

// Adam with bias correction over the flat parameter registry.
class Adam {
 public:
  Adam(const OptimConfig& cfg, std::size_t total_size);
  void step(const std::vector<TensorRef>& params,
            const std::vector<TensorRef>& grads, double lr);

 private:
  OptimConfig cfg_;
  Vec m_, v_;
  long t_ = 0;
};

// Scale all gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(const std::vector<TensorRef>& grads, double max_norm);

// End-to-end optimization per the config; writes train_log.csv, periodic
// checkpoints and (when eval_dir is set) an evaluation report under out_dir.
TrainResult train(const TrainConfig& cfg);

// Deterministic-mode evaluation: initial fixation at the center, fixations
// follow the policy means.
std::vector<EvalRecord> collect_eval_records(const Model& model,
                                             const Dataset& ds, int T,
                                             int threads = 0);
MetricsReport evaluate(const Model& model, const Dataset& ds, int T,
                       int threads = 0);

struct SweepEntry {
  std::string value;
  MetricsReport report;
};

// Trains one model per axis value (shared seed and budget) and tabulates the
// reports; writes sweep.csv and sweep.png under base.out_dir.
std::vector<SweepEntry> ablation_sweep(const TrainConfig& base,
                                       const std::string& axis,
                                       const std::vector<std::string>& values);

}  // namespace fovea
