#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(MSDEPTH_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (const std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("msdepth_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << R"({"data": {"train_samples": 4, "val_samples": 2, "test_samples": 3},
    "align": {"epochs": 1, "batch_size": 2)" << extra << R"(},
    "fuse": {"epochs": 1, "batch_size": 2}, "eval": {"batch_size": 3}})";
  return p;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("help and usage errors") {
  const Run help = run("--help");
  CHECK(help.code == 0);
  for (const char* sub : {"gen-data", "train-align", "train-fuse", "eval", "report"}) CHECK(contains(help.output, sub));

  const Run unknown = run("gen-data --bogus");
  CHECK(unknown.code == 2);
  CHECK(contains(unknown.output, "Usage"));

  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);

  const Run no_ckpt = run("train-fuse");
  CHECK(no_ckpt.code == 2);
  CHECK(contains(no_ckpt.output, "--align-ckpt"));

  CHECK(run("eval --align-ckpt x.ckpt --mode both").code == 2);
  CHECK(run("eval --align-ckpt x.ckpt --split fog").code == 2);
  CHECK(run("eval --align-ckpt x.ckpt --mode fused").code == 2);
}

TEST_CASE("config problems exit with 2 and name the file") {
  const fs::path dir = scratch("config");
  const fs::path missing = dir / "absent.json";
  const Run r = run("--config " + missing.string() + " gen-data --out " + (dir / "d").string());
  CHECK(r.code == 2);
  CHECK(contains(r.output, missing.string()));

  std::ofstream(dir / "bad.json") << R"({"align": {"learning_rate": 1}})";
  const Run bad = run("--config " + (dir / "bad.json").string() + " train-align --out " + (dir / "o").string());
  CHECK(bad.code == 2);
  CHECK(contains(bad.output, "align.learning_rate"));
}

TEST_CASE("divergence exits with 3") {
  const fs::path dir = scratch("diverge");
  const fs::path cfg = write_config(dir, R"(, "lr": 1e30)");
  const Run r = run("--config " + cfg.string() + " --out " + (dir / "align").string() + " train-align");
  CHECK(r.code == 3);
  CHECK(contains(r.output, "contract violation"));
}

TEST_CASE("damaged checkpoints exit with 4") {
  const fs::path dir = scratch("damaged");
  std::ofstream(dir / "align.ckpt") << "MSDCKPT";
  const Run r = run("--out " + (dir / "e").string() + " eval --align-ckpt " + (dir / "align.ckpt").string());
  CHECK(r.code == 4);
}

TEST_CASE("smoke chain") {
  const fs::path dir = scratch("smoke");
  const fs::path cfg = write_config(dir);
  const std::string common = "--config " + cfg.string() + " --seed 3 ";

  const Run gen = run(common + "--out " + (dir / "data").string() + " gen-data");
  REQUIRE(gen.code == 0);
  for (const char* split : {"train", "val", "test"}) {
    CHECK(first_line(dir / "data" / split / "index.csv") == "sample_id,condition,seed");
  }

  const Run align = run(common + "--out " + (dir / "align").string() + " train-align");
  REQUIRE(align.code == 0);
  CHECK(fs::exists(dir / "align" / "align.ckpt"));
  CHECK(fs::file_size(dir / "align" / "train_log.jsonl") > 0);
  CHECK(fs::file_size(dir / "align" / "val_log.jsonl") > 0);
  const std::string align_ckpt = (dir / "align" / "align.ckpt").string();

  const Run fuse = run(common + "--out " + (dir / "fuse").string() + " train-fuse --align-ckpt " + align_ckpt);
  REQUIRE(fuse.code == 0);
  const std::string fuse_ckpt = (dir / "fuse" / "fuse.ckpt").string();
  CHECK(fs::exists(fuse_ckpt));

  const Run per = run(common + "--out " + (dir / "eval").string() + " eval --align-ckpt " + align_ckpt);
  REQUIRE(per.code == 0);
  CHECK(first_line(dir / "eval" / "metrics.csv") == "modality,condition,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3,n_pixels");

  const Run fused = run(common + "--out " + (dir / "rain").string() + " eval --mode fused --split rain --align-ckpt " +
                        align_ckpt + " --fuse-ckpt " + fuse_ckpt);
  REQUIRE(fused.code == 0);
  std::ifstream csv(dir / "rain" / "metrics.csv");
  std::string line;
  std::getline(csv, line);
  int rows = 0, fused_rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    std::istringstream fields(line);
    std::string modality, condition;
    std::getline(fields, modality, ',');
    std::getline(fields, condition, ',');
    CHECK((condition == "rain" || condition == "Avg"));
    fused_rows += modality == "fused";
  }
  CHECK(rows == 8);
  CHECK(fused_rows == 2);

  const Run report = run("--out " + (dir / "rain").string() + " report");
  REQUIRE(report.code == 0);
  CHECK(fs::exists(dir / "rain" / "report.txt"));
  CHECK(fs::exists(dir / "rain" / "plots" / "rmse_rain.png"));
  CHECK(fs::exists(dir / "rain" / "plots" / "d1_avg.png"));

  // A fuse checkpoint only loads next to the align checkpoint it was trained on.
  const fs::path other = dir / "other";
  REQUIRE(run("--config " + cfg.string() + " --seed 4 --out " + other.string() + " train-align").code == 0);
  const Run mismatch = run(common + "--out " + (dir / "x").string() + " eval --mode fused --align-ckpt " +
                           (other / "align.ckpt").string() + " --fuse-ckpt " + fuse_ckpt);
  CHECK(mismatch.code == 4);
}
