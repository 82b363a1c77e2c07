#include "testing.hpp"

#include <filesystem>
#include <fstream>

#include "msdepth/config.hpp"
#include "msdepth/errors.hpp"
#include "oracles.hpp"

using namespace msdepth;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

AppConfig random_config(oracle::Gen& gen) {
  AppConfig c;
  c.seed = gen.bits();
  c.data.train_samples = gen.integer(1, 2000);
  c.data.val_samples = gen.integer(1, 100);
  c.data.test_samples = gen.integer(1, 100);
  c.data.split_seed = gen.bits() >> 1;
  const double a = gen.uniform(0, 1), b = gen.uniform(0, 1 - a);
  c.data.train_mix = {a, b, 1 - a - b};
  c.data.corruption.night_rgb_gain = gen.uniform(0.05, 1);
  c.data.augment.crop_scale = {gen.uniform(0.5, 0.9), 1.0};
  c.data.augment.horizontal_flip = gen.coin();
  if (gen.coin()) c.data.calibration = "rig_" + gen.label(8) + ".json";
  c.contrastive.tau = gen.uniform(0.01, 1);
  c.contrastive.lambda_cont = gen.uniform(0, 2);
  c.contrastive.gamma = gen.uniform(0, 1);
  c.contrastive.negatives = gen.coin() ? DenseNegatives::Local : DenseNegatives::GlobalPool;
  c.fuse_loss.lambda_geo = gen.uniform(0, 1);
  c.fusion.normalize_shared = gen.coin();
  c.align.epochs = gen.integer(0, 100);
  c.align.lr = gen.uniform(0, 1e-2);
  c.fuse.batch_size = gen.integer(1, 16);
  c.eval.depth_cap = gen.uniform(10, 80);
  return c;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("msdepth_cfg_" + name);
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("defaults validate and serialize every section") {
  const AppConfig c;
  CHECK_NOTHROW(c.validate());
  const json j = to_json(c);
  for (const char* key : {"seed", "data", "backbone", "fusion", "contrastive", "fuse_loss", "align", "fuse", "eval"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["contrastive"]["tau"] == 0.2);
  CHECK(j["contrastive"]["lambda_cont"] == 0.01);
  CHECK(j["contrastive"]["gamma"] == 0.5);
  CHECK(j["fuse_loss"]["lambda_geo"] == 0.5);
  CHECK(j["align"]["epochs"] == 40);
  CHECK(j["align"]["batch_size"] == 4);
  CHECK(j["eval"]["depth_cap"] == 80.0);
}

TEST_CASE("config survives a JSON round trip") {
  oracle::Gen gen(21);
  for (int trial = 0; trial < 100; ++trial) {
    const AppConfig c = random_config(gen);
    const json j = to_json(c);
    const AppConfig back = config_from_json(json::parse(j.dump()));
    CHECK(to_json(back) == j);
    CHECK(config_digest(back) == config_digest(c));
  }
}

TEST_CASE("partial documents keep defaults") {
  const AppConfig c = config_from_json(json::parse(R"({"contrastive": {"lambda_cont": 0.0}, "align": {"epochs": 2}})"));
  CHECK(c.contrastive.lambda_cont == 0.0);
  CHECK(c.align.epochs == 2);
  CHECK(c.contrastive.tau == 0.2);
  CHECK(c.data.train_samples == 512);
  CHECK(config_from_json(json::object()).seed == AppConfig{}.seed);
}

TEST_CASE("digest tracks content") {
  AppConfig a, b;
  CHECK(config_digest(a) == config_digest(b));
  CHECK(config_digest(a).size() == 64);
  b.contrastive.tau = 0.21;
  CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("bad documents are config errors") {
  const char* bad[] = {
      R"({"sede": 3})",
      R"({"data": {"train_sample": 3}})",
      R"({"data": {"train_samples": "many"}})",
      R"({"data": {"train_samples": 0}})",
      R"({"data": {"train_mix": [0.5, 0.5, 0.5]}})",
      R"({"data": {"augment": {"crop_scale": [1.2, 0.9]}}})",
      R"({"contrastive": {"tau": 0}})",
      R"({"contrastive": {"negatives": "everywhere"}})",
      R"({"fusion": {"heads": 5}})",
      R"({"fusion": {"channels": 32}})",
      R"({"align": {"lr": -1}})",
      R"({"align": {"batch_size": 0}})",
      R"({"eval": {"min_depth": 90}})",
      R"([1, 2])",
  };
  for (const char* text : bad) {
    INFO(text);
    CHECK_THROWS_AS(config_from_json(json::parse(text)), ConfigError);
  }
}

TEST_CASE("loading from disk") {
  const fs::path missing = fs::temp_directory_path() / "msdepth_cfg_absent.json";
  fs::remove(missing);
  try {
    load_config(missing);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(missing.string()) != std::string::npos);
  }

  const fs::path broken = write_file("broken.json", "{\"seed\": ");
  CHECK_THROWS_AS(load_config(broken), ConfigError);

  const fs::path unknown = write_file("unknown.json", R"({"eval": {"cap": 3}})");
  try {
    load_config(unknown);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("eval.cap") != std::string::npos);
  }

  const fs::path good = write_file("good.json", to_json(AppConfig{}).dump(2));
  CHECK(config_digest(load_config(good)) == config_digest(AppConfig{}));
}

TEST_CASE("configured calibration files are loaded") {
  AppConfig c;
  CHECK(c.rig() == default_rig());
  const fs::path rig_path = fs::temp_directory_path() / "msdepth_cfg_rig.json";
  CameraRig rig = default_rig();
  rig.camera(Spectrum::Nir) = make_camera(70, 70, 43.5, 27.5, 88, 56);
  save_rig(rig, rig_path);
  c.data.calibration = rig_path.string();
  CHECK(c.rig() == rig);
  c.data.calibration = (fs::temp_directory_path() / "msdepth_cfg_no_rig.json").string();
  CHECK_THROWS_AS(c.rig(), CalibrationError);
}

TEST_CASE("stage names") {
  CHECK(parse_stage("align") == Stage::Align);
  CHECK(parse_stage(to_string(Stage::Fuse)) == Stage::Fuse);
  CHECK_THROWS_AS(parse_stage("pretrain"), ConfigError);
}
