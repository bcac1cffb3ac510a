#include "fovea/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fovea/plot.hpp"

namespace fovea {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// config <-> ini
// ---------------------------------------------------------------------------

TrainConfig TrainConfig::from_ini(const IniFile& ini) {
  TrainConfig cfg;
  cfg.train_dir = ini.get("data.train_dir", "");
  cfg.eval_dir = ini.get("data.eval_dir", "");

  cfg.model.channels = ini.get_int("model.channels", 1);
  cfg.model.num_classes = ini.get_int("model.num_classes", 10);
  cfg.model.glimpse.s0 = ini.get_int("model.s0", 8);
  cfg.model.glimpse.n = ini.get_int("model.n", 3);
  cfg.model.glimpse.sf = ini.get_double("model.sf", 2.0);
  cfg.model.glimpse.su = ini.get_int("model.su", 16);
  const auto cc = ini.get_int_list("model.conv_channels", {32, 64, 4});
  if (cc.size() != 3)
    throw std::runtime_error("config: model.conv_channels needs 3 entries");
  cfg.model.conv_channels = {cc[0], cc[1], cc[2]};
  cfg.model.conv_kernel = ini.get_int("model.kernel", 5);
  cfg.model.feature_dim = ini.get_int("model.feature_dim", 256);
  cfg.model.fusion = fusion_from_string(ini.get("model.fusion", "add"));
  cfg.model.lstm_layers = ini.get_int("model.lstm_layers", 3);
  cfg.model.lstm_width = ini.get_int("model.lstm_width", 256);
  cfg.model.sigma = ini.get_double("model.sigma", 0.2);

  cfg.loss.sigma_o = ini.get_double("loss.sigma_o", 0.1);
  cfg.loss.sigma = cfg.model.sigma;
  cfg.loss.stochastic = ini.get_bool("loss.stochastic", true);
  cfg.loss.awareness = ini.get_bool("loss.awareness", true);

  cfg.steps_T = ini.get_int("train.T", 10);
  cfg.init_range = ini.get_double("train.init_range", 0.3);
  cfg.optim.lr = ini.get_double("train.lr", 1e-4);
  cfg.optim.lr_decay = ini.get_double("train.lr_decay", 1.0);
  cfg.optim.grad_clip = ini.get_double("train.grad_clip", 5.0);
  cfg.batch = ini.get_int("train.batch", 64);
  cfg.epochs = ini.get_int("train.epochs", 10);
  cfg.seed = static_cast<std::uint64_t>(ini.get_i64("train.seed", 1));
  cfg.eval_every = ini.get_int("train.eval_every", 0);
  cfg.threads = ini.get_int("train.threads", 0);
  cfg.limit_train = ini.get_int("train.limit_train", 0);
  cfg.limit_eval = ini.get_int("train.limit_eval", 0);
  cfg.out_dir = ini.get("train.out_dir", "run");
  return cfg;
}

IniFile TrainConfig::to_ini() const {
  IniFile ini;
  ini.set("data.train_dir", train_dir);
  ini.set("data.eval_dir", eval_dir);
  ini.set("model.channels", std::to_string(model.channels));
  ini.set("model.num_classes", std::to_string(model.num_classes));
  ini.set("model.s0", std::to_string(model.glimpse.s0));
  ini.set("model.n", std::to_string(model.glimpse.n));
  {
    std::ostringstream s;
    s << model.glimpse.sf;
    ini.set("model.sf", s.str());
  }
  ini.set("model.su", std::to_string(model.glimpse.su));
  ini.set("model.conv_channels", std::to_string(model.conv_channels[0]) + "," +
                                     std::to_string(model.conv_channels[1]) +
                                     "," +
                                     std::to_string(model.conv_channels[2]));
  ini.set("model.kernel", std::to_string(model.conv_kernel));
  ini.set("model.feature_dim", std::to_string(model.feature_dim));
  ini.set("model.fusion", fusion_to_string(model.fusion));
  ini.set("model.lstm_layers", std::to_string(model.lstm_layers));
  ini.set("model.lstm_width", std::to_string(model.lstm_width));
  {
    std::ostringstream s;
    s << model.sigma;
    ini.set("model.sigma", s.str());
  }
  {
    std::ostringstream s;
    s << loss.sigma_o;
    ini.set("loss.sigma_o", s.str());
  }
  ini.set("loss.stochastic", loss.stochastic ? "true" : "false");
  ini.set("loss.awareness", loss.awareness ? "true" : "false");
  ini.set("train.T", std::to_string(steps_T));
  {
    std::ostringstream s;
    s << init_range;
    ini.set("train.init_range", s.str());
  }
  {
    std::ostringstream s;
    s << optim.lr;
    ini.set("train.lr", s.str());
  }
  {
    std::ostringstream s;
    s << optim.lr_decay;
    ini.set("train.lr_decay", s.str());
  }
  {
    std::ostringstream s;
    s << optim.grad_clip;
    ini.set("train.grad_clip", s.str());
  }
  ini.set("train.batch", std::to_string(batch));
  ini.set("train.epochs", std::to_string(epochs));
  ini.set("train.seed", std::to_string(seed));
  ini.set("train.eval_every", std::to_string(eval_every));
  ini.set("train.threads", std::to_string(threads));
  ini.set("train.limit_train", std::to_string(limit_train));
  ini.set("train.limit_eval", std::to_string(limit_eval));
  ini.set("train.out_dir", out_dir);
  return ini;
}

std::string TrainConfig::digest() const {
  IniFile ini = to_ini();
  ini.set("train.out_dir", "");
  ini.set("train.threads", "");
  return digest_hex(ini.dump());
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

Adam::Adam(const OptimConfig& cfg, std::size_t total_size)
    : cfg_(cfg),
      m_(Vec::Zero(static_cast<Eigen::Index>(total_size))),
      v_(Vec::Zero(static_cast<Eigen::Index>(total_size))) {}

void Adam::step(const std::vector<TensorRef>& params,
                const std::vector<TensorRef>& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data;
    const double* g = grads[i].data;
    for (std::size_t k = 0; k < params[i].size; ++k) {
      double& m = m_(static_cast<Eigen::Index>(off + k));
      double& v = v_(static_cast<Eigen::Index>(off + k));
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g[k];
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g[k] * g[k];
      p[k] -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
    }
    off += params[i].size;
  }
}

double clip_gradients(const std::vector<TensorRef>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (std::size_t k = 0; k < g.size; ++k) sq += g.data[k] * g.data[k];
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads)
      for (std::size_t k = 0; k < g.size; ++k) g.data[k] *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

int effective_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

struct BatchStats {
  LossBreakdown sum;
  double iou_sum = 0.0;
  int count = 0;
};

void validate_dataset_for_model(const Dataset& ds, const ModelConfig& model) {
  if (ds.empty()) throw DatasetError("dataset is empty");
  for (const auto& rec : ds) {
    if (rec.pixels.c != model.channels)
      throw DatasetError("dataset/model channel mismatch at record " + rec.id);
    if (model.has_classifier() && !rec.label.has_value())
      throw DatasetError("record " + rec.id +
                         " has no label but the model classifies");
  }
}

}  // namespace

std::vector<EvalRecord> collect_eval_records(const Model& model,
                                             const Dataset& ds, int T,
                                             int threads) {
  const int nthreads = std::max(1, std::min<int>(effective_threads(threads),
                                                 static_cast<int>(ds.size())));
  std::vector<EvalRecord> records(ds.size());
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::string error;
  std::mutex error_mu;

  auto work = [&](int tid) {
    try {
      for (std::size_t i = tid; i < ds.size(); i += nthreads) {
        EpisodeOptions opt;
        opt.T = T;
        opt.mode = EpisodeMode::kDeterministic;
        Trajectory traj = run_episode(model, ds[i].pixels, opt);
        const StepOutput& last = traj.steps.back();
        EvalRecord r;
        r.id = ds[i].id;
        r.pred = last.box;
        r.score = last.score;
        if (last.class_dist.size() > 0) {
          Eigen::Index arg;
          last.class_dist.maxCoeff(&arg);
          r.pred_class = static_cast<int>(arg);
        }
        r.gt = ds[i].bbox;
        r.label = ds[i].label;
        records[i] = std::move(r);
      }
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(error_mu);
      failed = true;
      error = e.what();
    }
  };
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(work, t);
  for (auto& th : pool) th.join();
  if (failed) throw std::runtime_error("evaluation failed: " + error);
  return records;
}

MetricsReport evaluate(const Model& model, const Dataset& ds, int T,
                       int threads) {
  return compute_report(collect_eval_records(model, ds, T, threads),
                        model.config_digest());
}

TrainResult train(const TrainConfig& cfg) {
  cfg.model.validate();
  if (cfg.steps_T < 1) throw std::runtime_error("train: T must be >= 1");
  if (cfg.init_range < 0.0 || cfg.init_range > 1.0)
    throw std::runtime_error("train: init_range must lie in [0, 1]");
  if (cfg.batch < 1) throw std::runtime_error("train: batch must be >= 1");

  Dataset trainset = load_dataset(cfg.train_dir);
  if (cfg.limit_train > 0 &&
      static_cast<int>(trainset.size()) > cfg.limit_train)
    trainset.resize(cfg.limit_train);
  validate_dataset_for_model(trainset, cfg.model);

  Dataset evalset;
  if (!cfg.eval_dir.empty()) {
    evalset = load_dataset(cfg.eval_dir);
    if (cfg.limit_eval > 0 && static_cast<int>(evalset.size()) > cfg.limit_eval)
      evalset.resize(cfg.limit_eval);
    validate_dataset_for_model(evalset, cfg.model);
  }

  fs::create_directories(cfg.out_dir);
  cfg.to_ini().save(fs::path(cfg.out_dir) / "train_config.ini");

  Model model(cfg.model, cfg.seed);
  auto params = model.param_refs();
  Adam adam(cfg.optim, total_param_count(model.params()));

  const int nthreads = effective_threads(cfg.threads);
  std::vector<ModelParams> thread_grads;
  for (int t = 0; t < nthreads; ++t)
    thread_grads.push_back(ModelParams::zeros_like(cfg.model));
  ModelParams reduced = ModelParams::zeros_like(cfg.model);
  auto reduced_refs = enumerate_params(reduced);
  std::vector<std::vector<TensorRef>> thread_refs;
  for (auto& tg : thread_grads) thread_refs.push_back(enumerate_params(tg));

  std::ofstream log(fs::path(cfg.out_dir) / "train_log.csv");
  if (!log) throw std::runtime_error("train: cannot write train_log.csv");
  log.precision(12);
  log << "step,epoch,loss_total,loss_det,loss_cls,loss_policy,loss_score,"
         "loss_aware,batch_iou,grad_norm\n";

  const std::size_t n = trainset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  const fs::path ckpt_path = fs::path(cfg.out_dir) / "model.ckpt";
  TrainResult result;
  result.checkpoint = ckpt_path;
  std::int64_t global_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    // deterministic shuffle, one stream per epoch
    {
      Rng shuffle_rng(derive_seed(cfg.seed, 0x5u * 1000003u + epoch));
      for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
    const double lr = cfg.optim.lr * std::pow(cfg.optim.lr_decay, epoch);

    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;

    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t bsize = std::min<std::size_t>(cfg.batch, n - start);
      std::vector<BatchStats> stats(nthreads);
      std::atomic<bool> failed{false};
      std::string error;
      std::mutex error_mu;

      auto work = [&](int tid) {
        try {
          ModelParams& g = thread_grads[tid];
          const std::size_t chunk = (bsize + nthreads - 1) / nthreads;
          const std::size_t lo = tid * chunk;
          const std::size_t hi = std::min(bsize, lo + chunk);
          for (std::size_t slot = lo; slot < hi; ++slot) {
            if (failed.load(std::memory_order_relaxed)) return;
            const std::size_t idx = order[start + slot];
            const AnnotatedImage& ex = trainset[idx];
            // stream id depends only on (seed, epoch, slot position)
            Rng rng(derive_seed(cfg.seed,
                                0x10000000ULL +
                                    static_cast<std::uint64_t>(epoch) * n +
                                    start + slot));
            EpisodeCache cache;
            EpisodeOptions opt;
            opt.T = cfg.steps_T;
            opt.init_range = cfg.init_range;
            opt.mode = EpisodeMode::kStochastic;
            opt.rng = &rng;
            opt.cache = &cache;
            Trajectory traj = run_episode(model, ex.pixels, opt);

            TrajectoryGrad tg;
            LossBreakdown lb =
                hybrid_loss(traj, ex.bbox, ex.label, cfg.loss, nullptr, &tg);
            if (!std::isfinite(lb.total)) {
              std::lock_guard<std::mutex> lock(error_mu);
              failed = true;
              std::ostringstream msg;
              msg << "non-finite loss at example " << ex.id << ": det=" << lb.det
                  << " cls=" << lb.cls << " policy=" << lb.policy
                  << " score=" << lb.score << " aware=" << lb.aware;
              error = msg.str();
              return;
            }
            backward_episode(model, cache, tg, g);
            stats[tid].sum.det += lb.det;
            stats[tid].sum.cls += lb.cls;
            stats[tid].sum.policy += lb.policy;
            stats[tid].sum.score += lb.score;
            stats[tid].sum.aware += lb.aware;
            stats[tid].sum.total += lb.total;
            stats[tid].iou_sum += iou(traj.steps.back().box, ex.bbox);
            stats[tid].count += 1;
          }
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(error_mu);
          failed = true;
          error = e.what();
        }
      };

      if (nthreads == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
      }
      if (failed) throw std::runtime_error("training aborted: " + error);

      // reduce thread gradients in a fixed order, average over the batch
      for (std::size_t r = 0; r < reduced_refs.size(); ++r) {
        Eigen::Map<Vec> acc(reduced_refs[r].data,
                            static_cast<Eigen::Index>(reduced_refs[r].size));
        acc.setZero();
        for (int t = 0; t < nthreads; ++t) {
          Eigen::Map<Vec> part(thread_refs[t][r].data,
                               static_cast<Eigen::Index>(thread_refs[t][r].size));
          acc += part;
          part.setZero();
        }
        acc /= static_cast<double>(bsize);
      }
      const double gnorm = clip_gradients(reduced_refs, cfg.optim.grad_clip);
      adam.step(params, reduced_refs, lr);
      ++global_step;

      BatchStats total;
      for (const auto& s : stats) {
        total.sum.det += s.sum.det;
        total.sum.cls += s.sum.cls;
        total.sum.policy += s.sum.policy;
        total.sum.score += s.sum.score;
        total.sum.aware += s.sum.aware;
        total.sum.total += s.sum.total;
        total.iou_sum += s.iou_sum;
        total.count += s.count;
      }
      const double inv = 1.0 / total.count;
      log << global_step << "," << epoch << "," << total.sum.total * inv << ","
          << total.sum.det * inv << "," << total.sum.cls * inv << ","
          << total.sum.policy * inv << "," << total.sum.score * inv << ","
          << total.sum.aware * inv << "," << total.iou_sum * inv << ","
          << gnorm << "\n";
      epoch_loss += total.sum.total;
      epoch_count += total.count;
    }

    log.flush();
    const double mean_epoch_loss = epoch_loss / epoch_count;
    if (epoch == 0) result.first_epoch_loss = mean_epoch_loss;
    result.last_epoch_loss = mean_epoch_loss;

    CheckpointMeta meta;
    meta.epoch = epoch + 1;
    meta.global_step = global_step;
    meta.steps_T = cfg.steps_T;
    meta.init_range = cfg.init_range;
    {
      std::ostringstream mj;
      mj << "{\"train_loss\": " << mean_epoch_loss << "}";
      meta.metrics_json = mj.str();
    }
    save_checkpoint(ckpt_path, model, meta);

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch)
            .count();
    std::cout << "[train] epoch " << epoch + 1 << "/" << cfg.epochs
              << " mean_loss " << mean_epoch_loss << " lr " << lr << " ("
              << secs << " s)" << std::endl;

    if (!evalset.empty() && cfg.eval_every > 0 &&
        (epoch + 1) % cfg.eval_every == 0 && epoch + 1 < cfg.epochs) {
      MetricsReport rep = evaluate(model, evalset, cfg.steps_T, cfg.threads);
      std::cout << "[eval]  epoch " << epoch + 1 << " mean_iou " << rep.mean_iou;
      if (rep.map) std::cout << " map " << *rep.map;
      if (rep.error_rate) std::cout << " err " << *rep.error_rate;
      std::cout << std::endl;
    }
  }

  if (!evalset.empty()) {
    MetricsReport rep = evaluate(model, evalset, cfg.steps_T, cfg.threads);
    write_report(rep, fs::path(cfg.out_dir) / "eval");
    result.eval_report = rep;
    std::cout << "[eval]  final mean_iou " << rep.mean_iou;
    if (rep.map) std::cout << " map " << *rep.map;
    if (rep.error_rate) std::cout << " err " << *rep.error_rate;
    std::cout << std::endl;
  }
  return result;
}

// ---------------------------------------------------------------------------
// ablation sweep
// ---------------------------------------------------------------------------

namespace {

TrainConfig apply_axis(const TrainConfig& base, const std::string& axis,
                       const std::string& value) {
  TrainConfig cfg = base;
  if (axis == "r") {
    cfg.init_range = std::stod(value);
  } else if (axis == "n") {
    cfg.model.glimpse.n = std::stoi(value);
  } else if (axis == "T") {
    cfg.steps_T = std::stoi(value);
  } else if (axis == "fusion") {
    cfg.model.fusion = fusion_from_string(value);
  } else if (axis == "strategy") {
    if (value == "none") {
      cfg.loss.stochastic = false;
      cfg.loss.awareness = false;
    } else if (value == "s") {
      cfg.loss.stochastic = true;
      cfg.loss.awareness = false;
    } else if (value == "a") {
      cfg.loss.stochastic = false;
      cfg.loss.awareness = true;
    } else if (value == "sa") {
      cfg.loss.stochastic = true;
      cfg.loss.awareness = true;
    } else {
      throw std::runtime_error("unknown strategy value: " + value);
    }
  } else {
    throw std::runtime_error("unknown sweep axis: " + axis);
  }
  return cfg;
}

}  // namespace

std::vector<SweepEntry> ablation_sweep(const TrainConfig& base,
                                       const std::string& axis,
                                       const std::vector<std::string>& values) {
  if (values.empty()) throw std::runtime_error("sweep: no values given");
  if (base.eval_dir.empty())
    throw std::runtime_error("sweep: eval_dir must be set");
  fs::create_directories(base.out_dir);

  std::vector<SweepEntry> entries;
  for (const std::string& value : values) {
    TrainConfig cfg = apply_axis(base, axis, value);
    cfg.out_dir = (fs::path(base.out_dir) / (axis + "=" + value)).string();
    std::cout << "[sweep] " << axis << " = " << value << std::endl;
    TrainResult res = train(cfg);
    entries.push_back({value, *res.eval_report});
  }

  std::ofstream csv(fs::path(base.out_dir) / "sweep.csv");
  csv << axis << ",mean_iou,error_rate,map\n";
  for (const auto& e : entries) {
    csv << e.value << "," << e.report.mean_iou << ",";
    if (e.report.error_rate) csv << *e.report.error_rate;
    csv << ",";
    if (e.report.map) csv << *e.report.map;
    csv << "\n";
  }

  // one line chart per axis: mAP (or mean IoU when unlabeled) vs value
  std::vector<double> ys;
  std::vector<std::string> labels;
  for (const auto& e : entries) {
    ys.push_back(e.report.map ? *e.report.map : e.report.mean_iou);
    labels.push_back(e.value);
  }
  const std::string metric = entries.front().report.map ? "mAP" : "mean IoU";
  plot_series(fs::path(base.out_dir) / "sweep.png",
              metric + " vs " + axis, labels, {{metric, ys}});
  return entries;
}

}  // namespace fovea
