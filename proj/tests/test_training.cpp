#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fovea/dataset.hpp"
#include "fovea/training.hpp"

using namespace fovea;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// small but real: 16px glimpses, 2 scales, thin stacks
ModelConfig small_model() {
  ModelConfig cfg;
  cfg.glimpse = {8, 2, 2.0, 16};
  cfg.conv_channels = {8, 12, 4};
  cfg.feature_dim = 48;
  cfg.lstm_layers = 2;
  cfg.lstm_width = 48;
  cfg.num_classes = 10;
  return cfg;
}

fs::path make_mso_dir(const fs::path& root, int count, std::uint64_t seed) {
  const Dataset ds = build_benchmark_dataset("mso", "train", seed, count);
  save_dataset(ds, root);
  return root;
}

TrainConfig smoke_config(const fs::path& data_dir, const fs::path& out_dir) {
  TrainConfig cfg;
  cfg.train_dir = data_dir.string();
  cfg.model = small_model();
  cfg.loss.stochastic = true;
  cfg.loss.awareness = true;
  cfg.steps_T = 3;
  cfg.init_range = 0.3;
  cfg.optim.lr = 1e-3;
  cfg.batch = 10;
  cfg.epochs = 2;
  cfg.seed = 11;
  cfg.threads = 2;
  cfg.out_dir = out_dir.string();
  return cfg;
}

}  // namespace

TEST_CASE("train: loss decreases on a 50-image smoke run; logs are written") {
  TempDir data("fovea_train_data");
  TempDir out("fovea_train_out");
  fs::remove_all(data.path);
  make_mso_dir(data.path, 50, 5);

  TrainConfig cfg = smoke_config(data.path, out.path / "run");
  const TrainResult res = train(cfg);
  CHECK(res.last_epoch_loss < res.first_epoch_loss);
  CHECK(fs::exists(res.checkpoint));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "train_log.csv"));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "train_config.ini"));

  // the log satisfies the breakdown sum identity at every step
  std::ifstream log(fs::path(cfg.out_dir) / "train_log.csv");
  std::string line;
  std::getline(log, line);  // header
  int rows = 0;
  while (std::getline(log, line)) {
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> v;
    while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
    REQUIRE(v.size() == 10);
    const double total = v[2], parts = v[3] + v[4] + v[5] + v[6] + v[7];
    CHECK(total == doctest::Approx(parts).epsilon(1e-9));
    ++rows;
  }
  CHECK(rows == 2 * 5);  // 2 epochs x ceil(50/10) batches
}

TEST_CASE("train: same config and seed reproduce the metrics log exactly") {
  TempDir data("fovea_train_repro_data");
  TempDir out("fovea_train_repro_out");
  fs::remove_all(data.path);
  make_mso_dir(data.path, 30, 6);

  TrainConfig cfg = smoke_config(data.path, out.path / "a");
  cfg.epochs = 1;
  cfg.batch = 10;
  train(cfg);
  TrainConfig cfg2 = cfg;
  cfg2.out_dir = (out.path / "b").string();
  train(cfg2);
  CHECK(slurp(out.path / "a" / "train_log.csv") ==
        slurp(out.path / "b" / "train_log.csv"));
}

TEST_CASE("train: aborts loudly on impossible configs") {
  TempDir data("fovea_train_err_data");
  TempDir out("fovea_train_err_out");
  fs::remove_all(data.path);
  make_mso_dir(data.path, 10, 7);
  TrainConfig cfg = smoke_config(data.path, out.path / "run");
  cfg.steps_T = 0;
  CHECK_THROWS(train(cfg));
  cfg = smoke_config(data.path, out.path / "run2");
  cfg.model.channels = 3;  // gray data, rgb model
  CHECK_THROWS_AS(train(cfg), DatasetError);
  cfg = smoke_config(out.path / "missing", out.path / "run3");
  CHECK_THROWS_AS(train(cfg), DatasetError);
}

TEST_CASE("evaluate: untrained 10-class model sits at chance error") {
  TempDir data("fovea_eval_data");
  fs::remove_all(data.path);
  const Dataset ds = build_benchmark_dataset("mso", "test", 9, 3000);
  Model model(small_model(), 17);
  const MetricsReport rep = evaluate(model, ds, 3, 2);
  REQUIRE(rep.error_rate.has_value());
  CHECK(*rep.error_rate > 0.87);
  CHECK(*rep.error_rate < 0.93);
}

TEST_CASE("evaluate: deterministic across repeats and thread counts") {
  const Dataset ds = build_benchmark_dataset("mso", "test", 10, 64);
  Model model(small_model(), 23);
  const MetricsReport a = evaluate(model, ds, 3, 1);
  const MetricsReport b = evaluate(model, ds, 3, 2);
  const MetricsReport c = evaluate(model, ds, 3, 2);
  CHECK(a.mean_iou == b.mean_iou);
  CHECK(b.mean_iou == c.mean_iou);
  CHECK(*a.map == *b.map);
  CHECK(*a.error_rate == *b.error_rate);
}

TEST_CASE("checkpoint round trip: loaded model evaluates bit-identically") {
  TempDir out("fovea_ckpt_out");
  const Dataset ds = build_benchmark_dataset("mso", "test", 12, 40);
  Model model(small_model(), 29);
  const fs::path path = out.path / "m.ckpt";
  CheckpointMeta meta;
  meta.steps_T = 3;
  save_checkpoint(path, model, meta);
  Model loaded = load_checkpoint(path);
  const MetricsReport a = evaluate(model, ds, 3, 2);
  const MetricsReport b = evaluate(loaded, ds, 3, 2);
  CHECK(a.mean_iou == b.mean_iou);
  CHECK(*a.map == *b.map);
  CHECK(*a.error_rate == *b.error_rate);
}

TEST_CASE("config: ini round trip preserves the digest; overrides excluded") {
  TrainConfig cfg;
  cfg.train_dir = "somewhere/train";
  cfg.eval_dir = "somewhere/test";
  cfg.steps_T = 6;
  cfg.optim.lr = 2e-4;
  cfg.model.glimpse.n = 2;
  const TrainConfig back = TrainConfig::from_ini(cfg.to_ini());
  CHECK(back.to_ini().dump() == cfg.to_ini().dump());
  CHECK(back.digest() == cfg.digest());

  TrainConfig moved = cfg;
  moved.out_dir = "elsewhere";
  moved.threads = 5;
  CHECK(moved.digest() == cfg.digest());
  moved.optim.lr = 1e-3;
  CHECK(moved.digest() != cfg.digest());
}

TEST_CASE("ablation sweep: structural output over a tiny axis") {
  TempDir data("fovea_sweep_data");
  TempDir out("fovea_sweep_out");
  fs::remove_all(data.path);
  make_mso_dir(data.path, 24, 15);

  TrainConfig base = smoke_config(data.path, out.path / "sweep");
  base.eval_dir = base.train_dir;  // structural test only
  base.epochs = 1;
  base.batch = 12;
  const auto entries = ablation_sweep(base, "T", {"1", "2"});
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].value == "1");
  CHECK(entries[1].value == "2");
  CHECK(fs::exists(out.path / "sweep" / "sweep.csv"));
  CHECK(fs::exists(out.path / "sweep" / "sweep.png"));
  CHECK(fs::exists(out.path / "sweep" / "T=1" / "eval" / "report.json"));

  CHECK_THROWS(ablation_sweep(base, "bogus", {"1"}));
  TrainConfig no_eval = base;
  no_eval.eval_dir.clear();
  CHECK_THROWS(ablation_sweep(no_eval, "T", {"1"}));
}
