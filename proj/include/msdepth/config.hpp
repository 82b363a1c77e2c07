#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "msdepth/fusion.hpp"
#include "msdepth/losses.hpp"
#include "msdepth/model.hpp"
#include "msdepth/synthdata.hpp"

namespace msdepth {

enum class Stage : std::uint8_t { Align, Fuse };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view name);

struct DataConfig {
  int train_samples = 512;
  int val_samples = 32;
  int test_samples = 64;
  std::uint64_t split_seed = 7;
  std::array<double, 3> train_mix{0.4, 0.3, 0.3};  // day, night, rain
  std::array<double, 3> val_mix{0.4, 0.3, 0.3};
  std::array<double, 3> test_mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  std::optional<std::string> calibration;  // rig JSON path; the default rig when absent
  CorruptionConfig corruption;
  AugmentConfig augment = AugmentConfig::training_default();

  void validate() const;
};

struct TrainConfig {
  Stage stage = Stage::Align;
  int epochs = 40;
  int batch_size = 4;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int log_every = 1;  // steps between train_log.jsonl lines

  void validate() const;
};

struct EvalConfig {
  double min_depth = 1.0;
  double depth_cap = 80.0;
  int batch_size = 8;

  void validate() const;
};

/// Every module's settings in one document.
struct AppConfig {
  std::uint64_t seed = 7;
  DataConfig data;
  BackboneConfig backbone;
  FusionBlockConfig fusion;
  ContrastiveConfig contrastive;
  FuseLossConfig fuse_loss;
  TrainConfig align{Stage::Align, 40};
  TrainConfig fuse{Stage::Fuse, 20};
  EvalConfig eval;

  void validate() const;
  /// The calibration file when configured, else the default rig.
  CameraRig rig() const;
};

nlohmann::json to_json(const AppConfig& cfg);
/// Keys absent from `j` keep their defaults; unknown keys and bad values throw ConfigError.
AppConfig config_from_json(const nlohmann::json& j);
/// Throws ConfigError naming the path when it is missing or unparsable.
AppConfig load_config(const std::filesystem::path& path);

/// Hex SHA-256 of the canonical (sorted-key, compact) JSON form.
std::string config_digest(const AppConfig& cfg);

}  // namespace msdepth
