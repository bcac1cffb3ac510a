// End-to-end checks of the command-line tool, run as a subprocess.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fovea/dataset.hpp"
#include "fovea/network.hpp"
#include "fovea/training.hpp"

#ifndef FOVEA_CLI_PATH
#error "FOVEA_CLI_PATH must point at the built binary"
#endif

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

struct RunResult {
  int code;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "fovea_cli_out.txt";
  const std::string cmd =
      std::string(FOVEA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WEXITSTATUS(raw);
  std::ifstream in(log);
  std::ostringstream buf;
  buf << in.rdbuf();
  r.out = buf.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("cli: dataset generation is seed-idempotent with a manifest") {
  TempDir dir("fovea_cli_ds");
  const auto out1 = dir.path / "a";
  const auto out2 = dir.path / "b";
  auto r1 = run_cli("dataset mso --split test --seed 7 --count 40 --out " +
                    out1.string());
  CHECK(r1.code == 0);
  auto r2 = run_cli("dataset mso --split test --seed 7 --count 40 --out " +
                    out2.string());
  CHECK(r2.code == 0);
  CHECK(slurp(out1 / "annotations.jsonl") == slurp(out2 / "annotations.jsonl"));
  CHECK(fs::exists(out1 / "run_manifest.json"));
  CHECK(load_dataset(out1).size() == 40);
}

TEST_CASE("cli: msno differs from mso only within the noise budget") {
  TempDir dir("fovea_cli_msno");
  const auto mso_dir = dir.path / "mso";
  const auto msno_dir = dir.path / "msno";
  REQUIRE(run_cli("dataset mso --split test --seed 3 --count 30 --out " +
                  mso_dir.string())
              .code == 0);
  REQUIRE(run_cli("dataset msno --split test --seed 3 --count 30 --out " +
                  msno_dir.string())
              .code == 0);
  const Dataset mso = load_dataset(mso_dir);
  const Dataset msno = load_dataset(msno_dir);
  REQUIRE(mso.size() == msno.size());
  for (std::size_t i = 0; i < mso.size(); ++i) {
    int changed = 0;
    for (std::size_t k = 0; k < mso[i].pixels.data.size(); ++k)
      changed += mso[i].pixels.data[k] != msno[i].pixels.data[k];
    CHECK(changed <= 216);
  }
}

TEST_CASE("cli: bad inputs map to the documented exit codes") {
  TempDir dir("fovea_cli_err");
  // usage errors
  CHECK(run_cli("dataset").code == 1);
  CHECK(run_cli("train --config " + (dir.path / "nope.ini").string()).code == 1);
  CHECK(run_cli("bogus-subcommand").code == 1);
  // data error: unreadable digit source
  CHECK(run_cli("dataset mso --digits " + (dir.path / "missing").string() +
                " --out " + (dir.path / "x").string())
            .code == 2);
  // help is not an error
  CHECK(run_cli("--help").code == 0);
}

TEST_CASE("cli: train -> eval -> visualize -> benchmark pipeline") {
  TempDir dir("fovea_cli_pipe");
  const auto train_dir = dir.path / "train";
  const auto test_dir = dir.path / "test";
  REQUIRE(run_cli("dataset mso --split train --seed 5 --count 40 --out " +
                  train_dir.string())
              .code == 0);
  REQUIRE(run_cli("dataset mso --split test --seed 5 --count 20 --out " +
                  test_dir.string())
              .code == 0);

  std::ofstream cfg(dir.path / "cfg.ini");
  cfg << "[data]\ntrain_dir = " << train_dir.string()
      << "\neval_dir = " << test_dir.string() << "\n[model]\n"
      << "s0 = 8\nn = 2\nsu = 16\nconv_channels = 8,12,4\nfeature_dim = 48\n"
      << "lstm_layers = 2\nlstm_width = 48\n[train]\nT = 2\nbatch = 10\n"
      << "epochs = 1\nseed = 2\nthreads = 2\nout_dir = "
      << (dir.path / "run").string() << "\n";
  cfg.close();

  auto tr = run_cli("train --config " + (dir.path / "cfg.ini").string());
  CHECK(tr.code == 0);
  CHECK(tr.out.find("mean_iou = ") != std::string::npos);
  CHECK(tr.out.find("error_rate = ") != std::string::npos);
  CHECK(tr.out.find("map = ") != std::string::npos);
  const auto ckpt = dir.path / "run" / "model.ckpt";
  REQUIRE(fs::exists(ckpt));

  auto ev = run_cli("eval --checkpoint " + ckpt.string() + " --dataset " +
                    test_dir.string() + " --out " + (dir.path / "ev").string());
  CHECK(ev.code == 0);
  CHECK(ev.out.find("mean_iou = ") != std::string::npos);
  CHECK(fs::exists(dir.path / "ev" / "report.json"));
  CHECK(fs::exists(dir.path / "ev" / "report.txt"));

  auto viz = run_cli("visualize --checkpoint " + ckpt.string() + " --dataset " +
                     test_dir.string() + " -k 3 --out " +
                     (dir.path / "viz").string());
  CHECK(viz.code == 0);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(dir.path / "viz"))
    pngs += e.path().extension() == ".png";
  CHECK(pngs == 3);

  auto bench = run_cli("benchmark --checkpoint " + ckpt.string() +
                       " --sizes 56,128 --T 2 --out " +
                       (dir.path / "bench").string());
  CHECK(bench.code == 0);
  REQUIRE(fs::exists(dir.path / "bench" / "benchmark.csv"));
  // counted MACs identical across the two sizes
  std::ifstream csv(dir.path / "bench" / "benchmark.csv");
  std::string header, row1, row2;
  std::getline(csv, header);
  std::getline(csv, row1);
  std::getline(csv, row2);
  auto field = [](const std::string& row, int idx) {
    std::stringstream ss(row);
    std::string tok;
    for (int i = 0; i <= idx; ++i) std::getline(ss, tok, ',');
    return tok;
  };
  CHECK(field(row1, 1) == field(row2, 1));

  // eval with a dataset the checkpoint cannot consume
  auto bad = run_cli("eval --checkpoint " + ckpt.string() + " --dataset " +
                     (dir.path / "nothing").string());
  CHECK(bad.code == 2);
}
