#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "msdepth/geometry.hpp"
#include "msdepth/types.hpp"

namespace msdepth {

using Vec3 = std::array<double, 3>;

enum class PrimitiveKind : std::uint8_t { Rectangle, Sphere };

struct Texture {
  Vec3 base{0.5, 0.5, 0.5};
  Vec3 accent{0.5, 0.5, 0.5};
  int pattern = 0;         // 0 stripes, 1 checker, 2 waves
  double frequency = 1.0;  // cycles per meter on the surface
  double phase = 0.0;
  double nir_gain = 1.0;   // NIR reflectance relative to visible luminance
  double nir_offset = 0.0;

  bool operator==(const Texture&) const = default;
};

/// Analytic scene element. Geometry lives in the thermal camera frame
/// (x right, y down, z forward; meters).
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Rectangle;
  Vec3 center{0, 0, 10};
  Vec3 normal{0, 0, -1};  // rectangles: facing the rig
  Vec3 axis_u{1, 0, 0};   // rectangles: in-plane axes spanning the extent
  Vec3 axis_v{0, 1, 0};
  double half_u = 1.0;
  double half_v = 1.0;
  double radius = 1.0;    // spheres
  Texture texture;
  double temperature = 0.5;           // emissive intensity in [0, 1]
  double temperature_gradient = 0.0;  // change per meter along axis_v

  bool operator==(const Primitive&) const = default;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;

  bool operator==(const SceneSpec&) const = default;
};

/// Distance from `point` to the closest point of `prim`.
double distance_to(const Primitive& prim, const Vec3& point);

/// Deterministic scene: a ground plane, a background wall and 1-10 objects
/// resting on the ground; every surface point seen by the rig is 1-80 m away.
SceneSpec generate_scene(std::uint64_t seed);

/// Severity constants of the per-condition sensor corruptions.
struct CorruptionConfig {
  double night_rgb_gain = 0.2;
  double night_rgb_noise_sigma = 0.05;
  double night_nir_gain = 0.7;
  double rain_min_coverage = 0.05;
  double rain_max_coverage = 0.15;
  double rain_contrast_gain = 0.6;
  int rain_streak_blur = 5;   // box size of the local blur behind streaks
  int rain_thermal_blur = 3;  // box size of the mild thermal blur
};

/// One spectrum of a co-captured sample, in its own camera plane.
struct SpectralImage {
  torch::Tensor image;  // [C, H, W] float32 in [0, 1]; C = 3 for rgb, 1 otherwise
  torch::Tensor depth;  // [1, H, W] float32 meters, 0 where invalid
  torch::Tensor valid;  // [H, W] bool
};

struct MultiSpectralSample {
  std::array<SpectralImage, 3> planes;
  Condition condition = Condition::Day;
  CameraRig rig;
  std::uint64_t seed = 0;

  const SpectralImage& plane(Spectrum s) const { return planes[index_of(s)]; }
  SpectralImage& plane(Spectrum s) { return planes[index_of(s)]; }
};

/// Ray casts the scene into every camera of the rig (thermal frame = scene
/// frame) and applies the condition's corruptions. Throws CalibrationError
/// for incomplete rigs.
MultiSpectralSample render_sample(const SceneSpec& scene, const CameraRig& rig, Condition condition,
                                  const CorruptionConfig& corruption = {});

/// Closed ranges [lo, hi] of augmentation factors. Identity is every range at 1.
struct AugmentConfig {
  std::array<double, 2> crop_scale{1.0, 1.0};
  std::array<double, 2> brightness{1.0, 1.0};
  std::array<double, 2> contrast{1.0, 1.0};
  std::array<double, 2> saturation{1.0, 1.0};  // rgb only
  std::array<double, 2> hue{1.0, 1.0};         // rgb only; (h - 1) turns of hue rotation
  bool horizontal_flip = false;

  void validate() const;
  static AugmentConfig training_default();
};

/// Same crop-and-resize (and optional flip) on every plane with intrinsics and
/// extrinsics kept consistent; photometric jitter drawn per spectrum.
MultiSpectralSample augment(const MultiSpectralSample& sample, const AugmentConfig& cfg, std::uint64_t seed);

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

struct DatasetSpec {
  int n = 0;
  std::uint64_t split_seed = 0;
  std::array<double, 3> condition_mix{1.0, 0.0, 0.0};  // day, night, rain
  Split split = Split::Train;
};

/// Deterministic, lazily rendered sequence of samples.
class SampleSource {
 public:
  struct Entry {
    std::uint64_t scene_seed;
    Condition condition;
  };

  SampleSource(DatasetSpec spec, CameraRig rig, CorruptionConfig corruption = {});

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<Entry>& entries() const { return entries_; }
  const CameraRig& rig() const { return rig_; }
  MultiSpectralSample render(std::size_t i) const;

  /// Renders everything once and keeps the samples; `render` then returns copies.
  void cache_all();

  /// Keeps only entries whose condition is in `keep`.
  SampleSource filtered(std::span<const Condition> keep) const;

 private:
  SampleSource() = default;
  std::vector<Entry> entries_;
  CameraRig rig_;
  CorruptionConfig corruption_;
  std::vector<MultiSpectralSample> cache_;
};

/// Scene seed of sample `index`; seeds of different splits never collide.
std::uint64_t scene_seed(std::uint64_t split_seed, Split split, std::uint64_t index);

/// Per-condition counts by largest remainder; throws ConfigError unless the
/// proportions are non-negative and sum to 1.
std::array<int, 3> allocate_conditions(int n, const std::array<double, 3>& mix);

SampleSource make_dataset(int n, std::uint64_t split_seed, const std::array<double, 3>& condition_mix,
                          Split split = Split::Train, const CameraRig& rig = default_rig(),
                          const CorruptionConfig& corruption = {});

/// Writes per-sample directories (16-bit PNG images, PFM depth maps, the
/// calibration JSON) and an index.csv of (sample_id, condition, seed).
void export_dataset(const SampleSource& source, const std::filesystem::path& dir);

/// PFM helpers for single-channel float maps ([H, W] or [1, H, W]).
void write_pfm(const std::filesystem::path& path, const torch::Tensor& map);
torch::Tensor read_pfm(const std::filesystem::path& path);

}  // namespace msdepth
