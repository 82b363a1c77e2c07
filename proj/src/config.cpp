#include "msdepth/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "msdepth/digest.hpp"
#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

using nlohmann::json;

// Reads the keys of one JSON object into fields and rejects keys it was never asked about.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }
  Section(const Section&) = delete;

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown key " + path_ + "." + key);
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad value for " + path_ + "." + key);
    }
  }

  void get(const char* key, std::optional<std::string>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (v.is_null()) {
      out.reset();
    } else if (v.is_string()) {
      out = v.get<std::string>();
    } else {
      throw ConfigError("bad value for " + path_ + "." + key);
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check_mix(const std::array<double, 3>& mix, const char* name) {
  double sum = 0.0;
  for (double p : mix) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError(std::string(name) + " entries must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(std::string(name) + " must sum to 1");
}

json corruption_json(const CorruptionConfig& c) {
  return {{"night_rgb_gain", c.night_rgb_gain},
          {"night_rgb_noise_sigma", c.night_rgb_noise_sigma},
          {"night_nir_gain", c.night_nir_gain},
          {"rain_min_coverage", c.rain_min_coverage},
          {"rain_max_coverage", c.rain_max_coverage},
          {"rain_contrast_gain", c.rain_contrast_gain},
          {"rain_streak_blur", c.rain_streak_blur},
          {"rain_thermal_blur", c.rain_thermal_blur}};
}

void read_corruption(const json& j, const std::string& path, CorruptionConfig& c) {
  Section s(j, path);
  s.get("night_rgb_gain", c.night_rgb_gain);
  s.get("night_rgb_noise_sigma", c.night_rgb_noise_sigma);
  s.get("night_nir_gain", c.night_nir_gain);
  s.get("rain_min_coverage", c.rain_min_coverage);
  s.get("rain_max_coverage", c.rain_max_coverage);
  s.get("rain_contrast_gain", c.rain_contrast_gain);
  s.get("rain_streak_blur", c.rain_streak_blur);
  s.get("rain_thermal_blur", c.rain_thermal_blur);
  s.done();
}

json augment_json(const AugmentConfig& a) {
  return {{"crop_scale", a.crop_scale}, {"brightness", a.brightness}, {"contrast", a.contrast},
          {"saturation", a.saturation}, {"hue", a.hue},               {"horizontal_flip", a.horizontal_flip}};
}

void read_augment(const json& j, const std::string& path, AugmentConfig& a) {
  Section s(j, path);
  s.get("crop_scale", a.crop_scale);
  s.get("brightness", a.brightness);
  s.get("contrast", a.contrast);
  s.get("saturation", a.saturation);
  s.get("hue", a.hue);
  s.get("horizontal_flip", a.horizontal_flip);
  s.done();
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"log_every", t.log_every}};
}

void read_train(const json& j, const std::string& path, TrainConfig& t) {
  Section s(j, path);
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("lr", t.lr);
  s.get("weight_decay", t.weight_decay);
  s.get("log_every", t.log_every);
  s.done();
}

std::string_view negatives_name(DenseNegatives n) { return n == DenseNegatives::Local ? "local" : "global-pool"; }

}  // namespace

std::string_view to_string(Stage s) { return s == Stage::Align ? "align" : "fuse"; }

Stage parse_stage(std::string_view name) {
  if (name == "align") return Stage::Align;
  if (name == "fuse") return Stage::Fuse;
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

void DataConfig::validate() const {
  if (train_samples < 1 || val_samples < 1 || test_samples < 1) throw ConfigError("sample counts must be >= 1");
  check_mix(train_mix, "data.train_mix");
  check_mix(val_mix, "data.val_mix");
  check_mix(test_mix, "data.test_mix");
  if (!(corruption.rain_min_coverage >= 0.0 && corruption.rain_min_coverage <= corruption.rain_max_coverage &&
        corruption.rain_max_coverage <= 1.0)) {
    throw ConfigError("rain coverage must satisfy 0 <= min <= max <= 1");
  }
  if (corruption.rain_streak_blur < 1 || corruption.rain_thermal_blur < 1) throw ConfigError("blur sizes must be >= 1");
  augment.validate();
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

void EvalConfig::validate() const {
  if (!(min_depth > 0.0 && min_depth < depth_cap) || !std::isfinite(depth_cap)) {
    throw ConfigError("eval requires 0 < min_depth < depth_cap");
  }
  if (batch_size < 1) throw ConfigError("eval batch_size must be >= 1");
}

void AppConfig::validate() const {
  data.validate();
  backbone.validate();
  fusion.validate();
  contrastive.validate();
  fuse_loss.validate();
  align.validate();
  fuse.validate();
  eval.validate();
  if (align.stage != Stage::Align || fuse.stage != Stage::Fuse) throw ConfigError("stage sections are swapped");
  if (fusion.channels != backbone.bottleneck_channels) {
    throw ConfigError("fusion.channels must equal backbone.bottleneck_channels");
  }
}

CameraRig AppConfig::rig() const {
  if (!data.calibration) return default_rig();
  try {
    return load_rig(*data.calibration);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

nlohmann::json to_json(const AppConfig& c) {
  json data = {{"train_samples", c.data.train_samples},
               {"val_samples", c.data.val_samples},
               {"test_samples", c.data.test_samples},
               {"split_seed", c.data.split_seed},
               {"train_mix", c.data.train_mix},
               {"val_mix", c.data.val_mix},
               {"test_mix", c.data.test_mix},
               {"calibration", c.data.calibration ? json(*c.data.calibration) : json(nullptr)},
               {"corruption", corruption_json(c.data.corruption)},
               {"augment", augment_json(c.data.augment)}};
  return {{"seed", c.seed},
          {"data", data},
          {"backbone",
           {{"base_channels", c.backbone.base_channels},
            {"depth_levels", c.backbone.depth_levels},
            {"bottleneck_channels", c.backbone.bottleneck_channels},
            {"scale", c.backbone.scale}}},
          {"fusion",
           {{"heads", c.fusion.heads},
            {"window", c.fusion.window},
            {"channels", c.fusion.channels},
            {"mlp_ratio", c.fusion.mlp_ratio},
            {"eps", c.fusion.eps},
            {"normalize_shared", c.fusion.normalize_shared}}},
          {"contrastive",
           {{"tau", c.contrastive.tau},
            {"lambda_cont", c.contrastive.lambda_cont},
            {"gamma", c.contrastive.gamma},
            {"negatives", negatives_name(c.contrastive.negatives)}}},
          {"fuse_loss", {{"lambda_geo", c.fuse_loss.lambda_geo}}},
          {"align", train_json(c.align)},
          {"fuse", train_json(c.fuse)},
          {"eval",
           {{"min_depth", c.eval.min_depth}, {"depth_cap", c.eval.depth_cap}, {"batch_size", c.eval.batch_size}}}};
}

AppConfig config_from_json(const nlohmann::json& j) {
  AppConfig c;
  {
    Section root(j, "config");
    root.get("seed", c.seed);
    if (const json* d = root.child("data")) {
      Section s(*d, "data");
      s.get("train_samples", c.data.train_samples);
      s.get("val_samples", c.data.val_samples);
      s.get("test_samples", c.data.test_samples);
      s.get("split_seed", c.data.split_seed);
      s.get("train_mix", c.data.train_mix);
      s.get("val_mix", c.data.val_mix);
      s.get("test_mix", c.data.test_mix);
      s.get("calibration", c.data.calibration);
      if (const json* x = s.child("corruption")) read_corruption(*x, s.path("corruption"), c.data.corruption);
      if (const json* x = s.child("augment")) read_augment(*x, s.path("augment"), c.data.augment);
      s.done();
    }
    if (const json* b = root.child("backbone")) {
      Section s(*b, "backbone");
      s.get("base_channels", c.backbone.base_channels);
      s.get("depth_levels", c.backbone.depth_levels);
      s.get("bottleneck_channels", c.backbone.bottleneck_channels);
      s.get("scale", c.backbone.scale);
      s.done();
    }
    if (const json* f = root.child("fusion")) {
      Section s(*f, "fusion");
      s.get("heads", c.fusion.heads);
      s.get("window", c.fusion.window);
      s.get("channels", c.fusion.channels);
      s.get("mlp_ratio", c.fusion.mlp_ratio);
      s.get("eps", c.fusion.eps);
      s.get("normalize_shared", c.fusion.normalize_shared);
      s.done();
    }
    if (const json* x = root.child("contrastive")) {
      Section s(*x, "contrastive");
      s.get("tau", c.contrastive.tau);
      s.get("lambda_cont", c.contrastive.lambda_cont);
      s.get("gamma", c.contrastive.gamma);
      std::string neg(negatives_name(c.contrastive.negatives));
      s.get("negatives", neg);
      if (neg == "local") {
        c.contrastive.negatives = DenseNegatives::Local;
      } else if (neg == "global-pool") {
        c.contrastive.negatives = DenseNegatives::GlobalPool;
      } else {
        throw ConfigError("contrastive.negatives must be 'local' or 'global-pool'");
      }
      s.done();
    }
    if (const json* x = root.child("fuse_loss")) {
      Section s(*x, "fuse_loss");
      s.get("lambda_geo", c.fuse_loss.lambda_geo);
      s.done();
    }
    if (const json* x = root.child("align")) read_train(*x, "align", c.align);
    if (const json* x = root.child("fuse")) read_train(*x, "fuse", c.fuse);
    if (const json* x = root.child("eval")) {
      Section s(*x, "eval");
      s.get("min_depth", c.eval.min_depth);
      s.get("depth_cap", c.eval.depth_cap);
      s.get("batch_size", c.eval.batch_size);
      s.done();
    }
    root.done();
  }
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config file " + path.string() + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_digest(const AppConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

}  // namespace msdepth
