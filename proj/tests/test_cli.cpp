#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "valen/data.hpp"

using namespace valen;

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  fs::path log = fs::temp_directory_path() / ("cli_out_" + std::to_string(counter++) + ".log");
  std::string cmd = std::string(VALEN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(rc), ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path workdir() {
  fs::path d = fs::temp_directory_path() / "valen_cli_tests";
  fs::create_directories(d);
  return d;
}

// clean three-class blobs written as CSV; the overlap makes instance mode
// meaningful
fs::path make_clean_csv(const std::string& name, uint64_t seed, int per_class = 20) {
  RngState rng(seed);
  PllDataset clean =
      make_blobs({{0.0, 0.0}, {2.5, 0.0}, {8.0, 8.0}}, per_class, 0.8, rng);
  fs::path p = workdir() / name;
  save_csv(clean, p.string());
  return p;
}

}  // namespace

TEST_CASE("corrupt is deterministic per seed and writes a report") {
  fs::path clean = make_clean_csv("clean_a.csv", 1);
  fs::path out1 = workdir() / "corr1.csv";
  fs::path out2 = workdir() / "corr2.csv";
  auto r1 = run_cli("corrupt --mode uniform --xi 0.5 --seed 7 " + clean.string() + " " +
                    out1.string());
  auto r2 = run_cli("corrupt --mode uniform --xi 0.5 --seed 7 " + clean.string() + " " +
                    out2.string());
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(out1) == slurp(out2));
  CHECK(fs::exists(out1.string() + ".report.json"));
  PllDataset corrupted = load_csv(out1.string());
  CHECK(corrupted.avg_candidates() > 1.0);
  CHECK(corrupted.avg_candidates() < 3.0);
}

TEST_CASE("corrupt with xi zero reproduces the singleton input") {
  fs::path clean = make_clean_csv("clean_b.csv", 2);
  fs::path out = workdir() / "corr_zero.csv";
  auto r = run_cli("corrupt --xi 0 --seed 3 " + clean.string() + " " + out.string());
  REQUIRE(r.exit_code == 0);
  PllDataset a = load_csv(clean.string());
  PllDataset b = load_csv(out.string());
  CHECK(a.candidates.data == b.candidates.data);
  CHECK(b.singleton_candidates());
}

TEST_CASE("instance-dependent corrupt caches the clean model") {
  fs::path clean = make_clean_csv("clean_c.csv", 3);
  fs::path out = workdir() / "corr_inst.csv";
  auto r = run_cli("corrupt --mode instance --seed 5 --clean-epochs 40 " + clean.string() +
                   " " + out.string());
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(out.string() + ".clean_model.bin"));
  CHECK(fs::exists(out.string() + ".clean_model.json"));
  PllDataset corrupted = load_csv(out.string());
  CHECK(corrupted.avg_candidates() >= 1.0);
}

TEST_CASE("corrupt validates its input before compute") {
  auto r = run_cli("corrupt /no/such/file.csv " + (workdir() / "x.csv").string());
  CHECK(r.exit_code == 2);
  fs::path clean = make_clean_csv("clean_d.csv", 4);
  auto bad_xi = run_cli("corrupt --xi 1.5 " + clean.string() + " " +
                        (workdir() / "y.csv").string());
  CHECK(bad_xi.exit_code == 2);
}

TEST_CASE("train writes a checkpoint and reports test accuracy deterministically") {
  fs::path clean = make_clean_csv("clean_e.csv", 5);
  fs::path test_csv = make_clean_csv("clean_e_test.csv", 6, 10);
  fs::path corr = workdir() / "train_in.csv";
  REQUIRE(run_cli("corrupt --xi 0.3 --seed 9 " + clean.string() + " " + corr.string())
              .exit_code == 0);
  std::string common = "train --data " + corr.string() + " --test " + test_csv.string() +
                       " --warmup-epochs 2 --total-epochs 4 --gcn-hidden 8 --obs-hidden 8 "
                       "--seed 11 --out ";
  fs::path out1 = workdir() / "run1";
  fs::path out2 = workdir() / "run2";
  auto r1 = run_cli(common + out1.string());
  auto r2 = run_cli(common + out2.string());
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(r1.output.find("final test accuracy:") != std::string::npos);
  CHECK(fs::exists(out1 / "config.json"));
  CHECK(fs::exists(out1 / "models.bin"));
  CHECK(fs::exists(out1 / "metrics.csv"));
  CHECK(slurp(out1 / "metrics.csv") == slurp(out2 / "metrics.csv"));
  std::string header;
  {
    std::ifstream m(out1 / "metrics.csv");
    std::getline(m, header);
  }
  CHECK(header.find("kl") != std::string::npos);
  CHECK(header.find("compat") != std::string::npos);
}

TEST_CASE("the no-enhancement ablation drops the enhancement metric columns") {
  fs::path clean = make_clean_csv("clean_f.csv", 7);
  fs::path corr = workdir() / "ablate_in.csv";
  REQUIRE(run_cli("corrupt --xi 0.3 --seed 13 " + clean.string() + " " + corr.string())
              .exit_code == 0);
  fs::path out = workdir() / "run_ablate";
  auto r = run_cli("train --data " + corr.string() +
                   " --total-epochs 3 --warmup-epochs 0 --ablate-no-le --seed 15 --out " +
                   out.string());
  REQUIRE(r.exit_code == 0);
  std::string header;
  {
    std::ifstream m(out / "metrics.csv");
    std::getline(m, header);
  }
  CHECK(header == "epoch,total,min_loss,test_acc");
}

TEST_CASE("config files feed the train command and flags take precedence") {
  fs::path clean = make_clean_csv("clean_g.csv", 8);
  fs::path corr = workdir() / "cfg_in.csv";
  REQUIRE(run_cli("corrupt --xi 0.3 --seed 17 " + clean.string() + " " + corr.string())
              .exit_code == 0);
  fs::path cfg = workdir() / "exp.toml";
  {
    std::ofstream f(cfg);
    f << "# experiment config\n"
      << "[train]\n"
      << "warmup-epochs = 1\n"
      << "total-epochs = 3\n"
      << "gcn-hidden = 8\n"
      << "obs-hidden = 8\n"
      << "seed = 21\n";
  }
  fs::path out = workdir() / "run_cfg";
  auto r = run_cli("--config " + cfg.string() + " train --data " + corr.string() +
                   " --total-epochs 2 --out " + out.string());
  REQUIRE(r.exit_code == 0);
  // flag override: 2 total epochs with 1 warm-up leaves exactly one data line
  std::ifstream m(out / "metrics.csv");
  std::string line;
  int lines = 0;
  std::getline(m, line);  // header
  while (std::getline(m, line)) lines += !line.empty();
  CHECK(lines == 1);
}

TEST_CASE("train rejects an invalid epoch budget before any compute") {
  fs::path clean = make_clean_csv("clean_h.csv", 9);
  auto r = run_cli("train --data " + clean.string() +
                   " --warmup-epochs 5 --total-epochs 2");
  CHECK(r.exit_code == 2);
}

TEST_CASE("eval reloads a checkpoint and reproduces the reported accuracy") {
  fs::path clean = make_clean_csv("clean_i.csv", 10);
  fs::path test_csv = make_clean_csv("clean_i_test.csv", 11, 10);
  fs::path corr = workdir() / "eval_in.csv";
  REQUIRE(run_cli("corrupt --xi 0.3 --seed 23 " + clean.string() + " " + corr.string())
              .exit_code == 0);
  fs::path out = workdir() / "run_eval";
  auto train = run_cli("train --data " + corr.string() + " --test " + test_csv.string() +
                       " --warmup-epochs 1 --total-epochs 3 --gcn-hidden 8 --obs-hidden 8 "
                       "--seed 25 --out " + out.string());
  REQUIRE(train.exit_code == 0);
  auto pos = train.output.find("final test accuracy: ");
  REQUIRE(pos != std::string::npos);
  double reported = std::stod(train.output.substr(pos + 21));
  auto eval = run_cli("eval --checkpoint " + out.string() + " --data " + test_csv.string());
  REQUIRE(eval.exit_code == 0);
  auto epos = eval.output.find("accuracy: ");
  REQUIRE(epos != std::string::npos);
  CHECK(std::stod(eval.output.substr(epos + 10)) == Catch::Approx(reported).margin(1e-9));
}

TEST_CASE("verification oracles pass and the fault detector fires") {
  CHECK(run_cli("verify").exit_code == 0);
  CHECK(run_cli("verify --only kl").exit_code == 0);
  CHECK(run_cli("verify --only bogus").exit_code == 2);
  CHECK(run_cli("verify --inject-fault").exit_code == 3);
}
