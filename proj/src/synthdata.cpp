#include "msdepth/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <tuple>

#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

constexpr double kGroundY = 1.5;  // rig height above the ground (y points down)
constexpr double kHitEps = 1e-9;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 add_scaled(const Vec3& a, const Vec3& d, double s) {
  return {a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]};
}
Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double normal(double sigma) { return std::normal_distribution<double>(0.0, sigma)(engine_); }
  double range(const std::array<double, 2>& r) { return r[0] == r[1] ? r[0] : uniform(r[0], r[1]); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Texture random_texture(Rng& rng) {
  Texture t;
  for (int c = 0; c < 3; ++c) {
    t.base[c] = rng.uniform(0.1, 0.9);
    t.accent[c] = rng.uniform(0.1, 0.9);
  }
  t.pattern = rng.integer(0, 2);
  t.frequency = rng.uniform(0.5, 2.0);
  t.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  t.nir_gain = rng.uniform(0.6, 1.6);
  t.nir_offset = rng.uniform(-0.1, 0.2);
  return t;
}

struct Hit {
  double depth = 0.0;
  int prim = -1;
  double a = 0.0, b = 0.0;  // surface coordinates, meters
  Vec3 normal{0, 0, -1};
};

Hit cast(const SceneSpec& scene, const Vec3& origin, const Vec3& dir) {
  Hit best;
  double best_t = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const Primitive& p = scene.primitives[i];
    if (p.kind == PrimitiveKind::Rectangle) {
      const double denom = dot(dir, p.normal);
      if (std::abs(denom) < 1e-12) continue;
      const double t = dot(sub(p.center, origin), p.normal) / denom;
      if (!(t > kHitEps) || t >= best_t) continue;
      const Vec3 rel = sub(add_scaled(origin, dir, t), p.center);
      const double a = dot(rel, p.axis_u);
      const double b = dot(rel, p.axis_v);
      if (std::abs(a) > p.half_u || std::abs(b) > p.half_v) continue;
      best_t = t;
      best.prim = static_cast<int>(i);
      best.a = a;
      best.b = b;
      best.normal = denom > 0 ? Vec3{-p.normal[0], -p.normal[1], -p.normal[2]} : p.normal;
    } else {
      const Vec3 oc = sub(origin, p.center);
      const double qa = dot(dir, dir);
      const double qb = 2.0 * dot(dir, oc);
      const double qc = dot(oc, oc) - p.radius * p.radius;
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc < 0) continue;
      const double sq = std::sqrt(disc);
      double t = (-qb - sq) / (2.0 * qa);
      if (!(t > kHitEps)) t = (-qb + sq) / (2.0 * qa);
      if (!(t > kHitEps) || t >= best_t) continue;
      const Vec3 rel = sub(add_scaled(origin, dir, t), p.center);
      best_t = t;
      best.prim = static_cast<int>(i);
      best.normal = {rel[0] / p.radius, rel[1] / p.radius, rel[2] / p.radius};
      best.a = p.radius * std::atan2(rel[0], -rel[2]);
      best.b = p.radius * std::asin(std::clamp(rel[1] / p.radius, -1.0, 1.0));
    }
  }
  if (best.prim >= 0) best.depth = best_t;
  return best;
}

double pattern_value(const Texture& tex, double a, double b) {
  const double w = 2.0 * std::numbers::pi * tex.frequency;
  double s = 0.0;
  switch (tex.pattern) {
    case 0:
      s = std::sin(w * a + tex.phase);
      break;
    case 1:
      s = std::sin(w * a + tex.phase) * std::sin(w * b + tex.phase) >= 0 ? 1.0 : -1.0;
      break;
    default:
      s = std::sin(w * a + tex.phase) * std::cos(0.7 * w * b);
      break;
  }
  return 0.5 + 0.5 * s;
}

const Vec3 kSunDir = normalized({0.3, -1.0, -0.4});
const Vec3 kRgbHaze{0.75, 0.78, 0.82};
constexpr double kRgbHazeDist = 60.0;
constexpr double kNirHaze = 0.6;
constexpr double kNirHazeDist = 100.0;
constexpr double kThrAmbient = 0.25;
constexpr double kThrAttenuationDist = 120.0;

torch::Tensor box_blur(const torch::Tensor& img, int k) {
  namespace F = torch::nn::functional;
  const int pad = k / 2;
  const torch::Tensor padded =
      F::pad(img.unsqueeze(0), F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReplicate));
  return F::avg_pool2d(padded, F::AvgPool2dFuncOptions(k).stride(1)).squeeze(0);
}

torch::Tensor contrast_gain(const torch::Tensor& img, double gain) {
  const torch::Tensor mean = img.mean({1, 2}, true);
  return (img - mean) * gain + mean;
}

torch::Tensor rain_streaks(int h, int w, double coverage, Rng& rng) {
  torch::Tensor mask = torch::zeros({h, w}, torch::kBool);
  auto m = mask.accessor<bool, 2>();
  const auto target = static_cast<std::int64_t>(std::ceil(coverage * h * w));
  std::int64_t covered = 0;
  for (int attempt = 0; attempt < 10000 && covered < target; ++attempt) {
    const double x0 = rng.uniform(0.0, w);
    const double y0 = rng.uniform(-0.25 * h, h);
    const int len = rng.integer(std::max(2, h / 4), std::max(3, h / 2));
    const double slope = rng.uniform(-0.35, 0.05);
    for (int k = 0; k < len && covered < target; ++k) {
      const int y = static_cast<int>(std::floor(y0)) + k;
      const int x = static_cast<int>(std::lround(x0 + slope * k));
      if (y < 0 || y >= h || x < 0 || x >= w || m[y][x]) continue;
      m[y][x] = true;
      ++covered;
    }
  }
  return mask;
}

void corrupt(SpectralImage& plane, Spectrum s, Condition condition, const CorruptionConfig& cfg,
             std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xC0FFEE + index_of(condition), index_of(s)));
  torch::Tensor img = plane.image;
  if (condition == Condition::Night) {
    if (s == Spectrum::Rgb) {
      torch::Tensor noise = torch::empty_like(img);
      auto n = noise.data_ptr<float>();
      for (std::int64_t i = 0; i < noise.numel(); ++i) n[i] = static_cast<float>(rng.normal(cfg.night_rgb_noise_sigma));
      img = img * cfg.night_rgb_gain + noise;
    } else if (s == Spectrum::Nir) {
      img = img * cfg.night_nir_gain;
    }
  } else if (condition == Condition::Rain) {
    if (s == Spectrum::Thr) {
      img = box_blur(img, cfg.rain_thermal_blur);
    } else {
      const double coverage = rng.uniform(cfg.rain_min_coverage, cfg.rain_max_coverage);
      const torch::Tensor mask = rain_streaks(static_cast<int>(img.size(1)), static_cast<int>(img.size(2)), coverage, rng);
      img = torch::where(mask.unsqueeze(0), box_blur(img, cfg.rain_streak_blur), img);
      img = contrast_gain(img, cfg.rain_contrast_gain);
    }
  }
  plane.image = img.clamp(0.0, 1.0).contiguous();
}

void check_range(const std::array<double, 2>& r, double lo, double hi, bool open_lo, const char* name) {
  const bool lo_ok = open_lo ? r[0] > lo : r[0] >= lo;
  if (!(lo_ok && r[0] <= r[1] && r[1] <= hi)) {
    throw ConfigError(std::string("augment range '") + name + "' outside its allowed interval");
  }
}

// Separable bilinear resampling at source coordinates xs (per output column)
// and ys (per output row); all coordinates lie inside the source frame.
torch::Tensor resample_bilinear(const torch::Tensor& img, const std::vector<double>& xs,
                                const std::vector<double>& ys) {
  const auto interp = [](const torch::Tensor& t, const std::vector<double>& pos, int dim) {
    const std::int64_t n = t.size(dim);
    std::vector<std::int64_t> i0, i1;
    std::vector<float> w1;
    for (double p : pos) {
      const auto a = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(p)), 0, n - 1);
      const auto b = std::min<std::int64_t>(a + 1, n - 1);
      i0.push_back(a);
      i1.push_back(b);
      w1.push_back(static_cast<float>(p - static_cast<double>(a)));
    }
    std::vector<std::int64_t> shape(t.dim(), 1);
    shape[dim] = static_cast<std::int64_t>(pos.size());
    const torch::Tensor wt = torch::tensor(w1).view(shape);
    return t.index_select(dim, torch::tensor(i0)) * (1 - wt) + t.index_select(dim, torch::tensor(i1)) * wt;
  };
  return interp(interp(img, xs, 2), ys, 1);
}

// Inverse depth is affine in pixel coordinates on any planar surface, so it is
// interpolated bilinearly wherever the surrounding 4x4 samples are valid and
// affine; anywhere else (edges, holes) the nearest sample is kept.
std::pair<torch::Tensor, torch::Tensor> resample_depth(const torch::Tensor& depth, const torch::Tensor& valid,
                                                       const std::vector<double>& xs,
                                                       const std::vector<double>& ys) {
  const torch::Tensor d = depth.squeeze(0).to(torch::kDouble).contiguous();
  const torch::Tensor m = valid.contiguous();
  const int h = static_cast<int>(d.size(0)), w = static_cast<int>(d.size(1));
  const auto da = d.accessor<double, 2>();
  const auto ma = m.accessor<bool, 2>();
  const auto inv = [&](int x, int y) { return 1.0 / da[std::clamp(y, 0, h - 1)][std::clamp(x, 0, w - 1)]; };
  const auto ok = [&](int x, int y) { return ma[std::clamp(y, 0, h - 1)][std::clamp(x, 0, w - 1)]; };

  torch::Tensor out = torch::zeros({1, static_cast<std::int64_t>(ys.size()), static_cast<std::int64_t>(xs.size())});
  torch::Tensor out_valid = torch::zeros({static_cast<std::int64_t>(ys.size()), static_cast<std::int64_t>(xs.size())},
                                         torch::kBool);
  auto oa = out.accessor<float, 3>();
  auto va = out_valid.accessor<bool, 2>();
  for (std::size_t j = 0; j < ys.size(); ++j) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const int x0 = std::clamp(static_cast<int>(std::floor(xs[i])), 0, w - 1);
      const int y0 = std::clamp(static_cast<int>(std::floor(ys[j])), 0, h - 1);
      bool planar = true;
      double scale = 0.0;
      for (int y = y0 - 1; y <= y0 + 2 && planar; ++y) {
        for (int x = x0 - 1; x <= x0 + 2 && planar; ++x) {
          planar = ok(x, y);
          if (planar) scale = std::max(scale, inv(x, y));
        }
      }
      for (int k = -1; k <= 2 && planar; ++k) {
        for (int c = 0; c < 2 && planar; ++c) {
          const double dx = inv(x0 + c - 1, y0 + k) - 2 * inv(x0 + c, y0 + k) + inv(x0 + c + 1, y0 + k);
          const double dy = inv(x0 + k, y0 + c - 1) - 2 * inv(x0 + k, y0 + c) + inv(x0 + k, y0 + c + 1);
          const double dxy = inv(x0 + c, y0 + k) - inv(x0 + c + 1, y0 + k) - inv(x0 + c, y0 + k + 1) +
                             inv(x0 + c + 1, y0 + k + 1);
          planar = std::max({std::abs(dx), std::abs(dy), std::abs(dxy)}) <= 1e-3 * scale;
        }
      }
      if (planar) {
        const double ax = xs[i] - x0, ay = ys[j] - y0;
        const double id = (1 - ay) * ((1 - ax) * inv(x0, y0) + ax * inv(x0 + 1, y0)) +
                          ay * ((1 - ax) * inv(x0, y0 + 1) + ax * inv(x0 + 1, y0 + 1));
        oa[0][j][i] = static_cast<float>(1.0 / id);
        va[j][i] = true;
      } else {
        const int xn = std::clamp(static_cast<int>(std::lround(xs[i])), 0, w - 1);
        const int yn = std::clamp(static_cast<int>(std::lround(ys[j])), 0, h - 1);
        oa[0][j][i] = static_cast<float>(da[yn][xn]);
        va[j][i] = ma[yn][xn];
      }
    }
  }
  return {out, out_valid};
}

torch::Tensor jitter(const torch::Tensor& image, bool is_rgb, const AugmentConfig& cfg, Rng& rng) {
  const double brightness = rng.range(cfg.brightness);
  const double contrast = rng.range(cfg.contrast);
  const double saturation = is_rgb ? rng.range(cfg.saturation) : 1.0;
  const double hue = is_rgb ? rng.range(cfg.hue) : 1.0;
  if (brightness == 1.0 && contrast == 1.0 && saturation == 1.0 && hue == 1.0) return image;

  torch::Tensor img = image;
  if (brightness != 1.0) img = img * brightness;
  if (contrast != 1.0) {
    const torch::Tensor mean = img.mean();
    img = (img - mean) * contrast + mean;
  }
  if (is_rgb && saturation != 1.0) {
    const torch::Tensor gray = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]).unsqueeze(0);
    img = gray + (img - gray) * saturation;
  }
  if (is_rgb && hue != 1.0) {
    // Rotate chroma in YIQ space.
    const double theta = 2.0 * std::numbers::pi * (hue - 1.0);
    const double c = std::cos(theta), s = std::sin(theta);
    const torch::Tensor y = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2];
    const torch::Tensor i = 0.596 * img[0] - 0.274 * img[1] - 0.322 * img[2];
    const torch::Tensor q = 0.211 * img[0] - 0.523 * img[1] + 0.312 * img[2];
    const torch::Tensor i2 = c * i - s * q;
    const torch::Tensor q2 = s * i + c * q;
    img = torch::stack({y + 0.956 * i2 + 0.621 * q2, y - 0.272 * i2 - 0.647 * q2, y - 1.106 * i2 + 1.703 * q2});
  }
  return img.clamp(0.0, 1.0).contiguous();
}

}  // namespace

double distance_to(const Primitive& prim, const Vec3& point) {
  const Vec3 rel = sub(point, prim.center);
  if (prim.kind == PrimitiveKind::Sphere) {
    return std::max(0.0, std::sqrt(dot(rel, rel)) - prim.radius);
  }
  const double a = std::clamp(dot(rel, prim.axis_u), -prim.half_u, prim.half_u);
  const double b = std::clamp(dot(rel, prim.axis_v), -prim.half_v, prim.half_v);
  const Vec3 closest = add_scaled(add_scaled(prim.center, prim.axis_u, a), prim.axis_v, b);
  const Vec3 d = sub(point, closest);
  return std::sqrt(dot(d, d));
}

SceneSpec generate_scene(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5CE7E));
  SceneSpec scene;
  scene.seed = seed;
  const double wall_z = rng.uniform(30.0, 70.0);

  Primitive ground;
  ground.kind = PrimitiveKind::Rectangle;
  ground.center = {0.0, kGroundY, 0.5 * (0.5 + wall_z)};
  ground.normal = {0.0, -1.0, 0.0};
  ground.axis_u = {1.0, 0.0, 0.0};
  ground.axis_v = {0.0, 0.0, 1.0};
  ground.half_u = 400.0;
  ground.half_v = 0.5 * (wall_z - 0.5);
  ground.texture = random_texture(rng);
  ground.texture.frequency = rng.uniform(0.3, 1.0);
  ground.temperature = rng.uniform(0.35, 0.5);
  ground.temperature_gradient = rng.uniform(-0.004, 0.004);
  scene.primitives.push_back(ground);

  Primitive wall;
  wall.kind = PrimitiveKind::Rectangle;
  wall.center = {0.0, 0.5 * (kGroundY - 600.0), wall_z};
  wall.normal = {0.0, 0.0, -1.0};
  wall.axis_u = {1.0, 0.0, 0.0};
  wall.axis_v = {0.0, 1.0, 0.0};
  wall.half_u = 400.0;
  wall.half_v = 0.5 * (600.0 + kGroundY);
  wall.texture = random_texture(rng);
  wall.temperature = rng.uniform(0.25, 0.4);
  scene.primitives.push_back(wall);

  const int objects = rng.integer(1, 10);
  for (int i = 0; i < objects; ++i) {
    Primitive p;
    const double z = rng.uniform(4.0, wall_z - 3.0);
    const double x = rng.uniform(-0.75, 0.75) * z;
    if (rng.uniform(0.0, 1.0) < 0.5) {
      p.kind = PrimitiveKind::Sphere;
      p.radius = rng.uniform(0.4, 2.2);
      p.center = {x, kGroundY - p.radius, z};
    } else {
      p.kind = PrimitiveKind::Rectangle;
      const double width = rng.uniform(0.8, 5.0);
      const double height = rng.uniform(0.8, 4.0);
      const double yaw = rng.uniform(-0.6, 0.6);
      p.normal = {std::sin(yaw), 0.0, -std::cos(yaw)};
      p.axis_u = {std::cos(yaw), 0.0, std::sin(yaw)};
      p.axis_v = {0.0, 1.0, 0.0};
      p.half_u = 0.5 * width;
      p.half_v = 0.5 * height;
      p.center = {x, kGroundY - 0.5 * height, z};
    }
    p.texture = random_texture(rng);
    p.temperature = rng.uniform(0.2, 0.95);
    p.temperature_gradient = rng.uniform(-0.05, 0.05);
    scene.primitives.push_back(p);
  }
  return scene;
}

MultiSpectralSample render_sample(const SceneSpec& scene, const CameraRig& rig, Condition condition,
                                  const CorruptionConfig& corruption) {
  rig.require_complete();
  MultiSpectralSample sample;
  sample.condition = condition;
  sample.rig = rig;
  sample.seed = scene.seed;

  for (Spectrum s : kSpectra) {
    const CameraModel& cam = rig.camera(s);
    const RigidTransform& pose = rig.calib.transform(s, Spectrum::Thr);
    const Vec3 origin{pose.m[3], pose.m[7], pose.m[11]};
    const int h = cam.height, w = cam.width;
    const int channels = native_channels(s);

    torch::Tensor image = torch::zeros({channels, h, w}, torch::kFloat);
    torch::Tensor depth = torch::zeros({1, h, w}, torch::kFloat);
    torch::Tensor valid = torch::zeros({h, w}, torch::kBool);
    auto img = image.accessor<float, 3>();
    auto dep = depth.accessor<float, 3>();
    auto val = valid.accessor<bool, 2>();

    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const Vec3 dc{(u - cam.cx()) / cam.fx(), (v - cam.cy()) / cam.fy(), 1.0};
        const Vec3 dir{pose.m[0] * dc[0] + pose.m[1] * dc[1] + pose.m[2] * dc[2],
                       pose.m[4] * dc[0] + pose.m[5] * dc[1] + pose.m[6] * dc[2],
                       pose.m[8] * dc[0] + pose.m[9] * dc[1] + pose.m[10] * dc[2]};
        const Hit hit = cast(scene, origin, dir);
        if (hit.prim < 0) continue;
        const Primitive& p = scene.primitives[static_cast<std::size_t>(hit.prim)];
        dep[0][v][u] = static_cast<float>(hit.depth);
        val[v][u] = true;

        const double t = pattern_value(p.texture, hit.a, hit.b);
        Vec3 albedo;
        for (int c = 0; c < 3; ++c) albedo[c] = p.texture.base[c] + (p.texture.accent[c] - p.texture.base[c]) * t;
        const double shade = 0.35 + 0.65 * std::max(0.0, dot(hit.normal, kSunDir));
        if (s == Spectrum::Rgb) {
          const double e = std::exp(-hit.depth / kRgbHazeDist);
          for (int c = 0; c < 3; ++c) {
            img[c][v][u] = static_cast<float>(albedo[c] * shade * e + kRgbHaze[c] * (1.0 - e));
          }
        } else if (s == Spectrum::Nir) {
          const double lum = 0.25 * albedo[0] + 0.35 * albedo[1] + 0.4 * albedo[2];
          const double refl = std::clamp(p.texture.nir_gain * lum + p.texture.nir_offset, 0.0, 1.0);
          const double e = std::exp(-hit.depth / kNirHazeDist);
          img[0][v][u] = static_cast<float>(refl * shade * e + kNirHaze * (1.0 - e));
        } else {
          const double temp = std::clamp(p.temperature + p.temperature_gradient * hit.b, 0.0, 1.0);
          const double e = std::exp(-hit.depth / kThrAttenuationDist);
          img[0][v][u] = static_cast<float>(temp * e + kThrAmbient * (1.0 - e));
        }
      }
    }
    SpectralImage& plane = sample.plane(s);
    plane.image = image.clamp(0.0, 1.0);
    plane.depth = depth;
    plane.valid = valid;
    corrupt(plane, s, condition, corruption, scene.seed);
  }
  return sample;
}

void AugmentConfig::validate() const {
  check_range(crop_scale, 0.5, 1.0, true, "crop_scale");
  check_range(brightness, 0.5, 1.5, false, "brightness");
  check_range(contrast, 0.5, 1.5, false, "contrast");
  check_range(saturation, 0.5, 1.5, false, "saturation");
  check_range(hue, 0.5, 1.5, false, "hue");
}

AugmentConfig AugmentConfig::training_default() {
  AugmentConfig cfg;
  cfg.crop_scale = {0.8, 1.0};
  cfg.brightness = {0.8, 1.2};
  cfg.contrast = {0.8, 1.2};
  cfg.saturation = {0.8, 1.2};
  cfg.hue = {0.95, 1.05};
  cfg.horizontal_flip = false;
  return cfg;
}

MultiSpectralSample augment(const MultiSpectralSample& sample, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0xA06));
  const double scale = rng.range(cfg.crop_scale);
  const bool flip = cfg.horizontal_flip && rng.uniform(0.0, 1.0) < 0.5;

  MultiSpectralSample out = sample;
  for (Spectrum s : kSpectra) {
    SpectralImage& plane = out.plane(s);
    CameraModel& cam = out.rig.camera(s);
    const int w = cam.width, h = cam.height;
    const int cw = static_cast<int>(std::lround(scale * w));
    const int ch = static_cast<int>(std::lround(scale * h));
    if (cw != w || ch != h) {
      // Output pixel u' samples source x0 + u' (cw - 1) / (w - 1), so the
      // intrinsics shift by the crop offset and scale by the inverse ratio.
      const double x0 = 0.5 * (w - cw), y0 = 0.5 * (h - ch);
      const double rx = static_cast<double>(w - 1) / (cw - 1);
      const double ry = static_cast<double>(h - 1) / (ch - 1);
      std::vector<double> xs(static_cast<std::size_t>(w)), ys(static_cast<std::size_t>(h));
      for (int u = 0; u < w; ++u) xs[static_cast<std::size_t>(u)] = x0 + u / rx;
      for (int v = 0; v < h; ++v) ys[static_cast<std::size_t>(v)] = y0 + v / ry;
      plane.image = resample_bilinear(plane.image, xs, ys).contiguous();
      std::tie(plane.depth, plane.valid) = resample_depth(plane.depth, plane.valid, xs, ys);
      cam.K[0] *= rx;
      cam.K[2] = (cam.K[2] - x0) * rx;
      cam.K[4] *= ry;
      cam.K[5] = (cam.K[5] - y0) * ry;
    }
    if (flip) {
      plane.image = plane.image.flip({-1}).contiguous();
      plane.depth = plane.depth.flip({-1}).contiguous();
      plane.valid = plane.valid.flip({-1}).contiguous();
      cam.K[2] = (w - 1) - cam.K[2];
    }
  }
  if (flip) {
    // Mirroring every camera about its x axis conjugates each extrinsic by S = diag(-1, 1, 1, 1).
    RigCalibration mirrored;
    for (const auto& [key, t] : out.rig.calib.entries()) {
      RigidTransform m = t;
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
          if ((i == 0) != (j == 0)) m.m[i * 4 + j] = -m.m[i * 4 + j];
        }
      }
      mirrored.set(key.first, key.second, m);
    }
    out.rig.calib = mirrored;
  }
  for (Spectrum s : kSpectra) {
    Rng photo(mix_seed(seed, 0xB0B, index_of(s)));
    out.plane(s).image = jitter(out.plane(s).image, s == Spectrum::Rgb, cfg, photo);
  }
  return out;
}

std::uint64_t scene_seed(std::uint64_t split_seed, Split split, std::uint64_t index) {
  if (index >= (1ULL << 28)) throw ConfigError("dataset index out of range");
  return ((split_seed & 0xFFFFFFFFULL) << 32) | (static_cast<std::uint64_t>(split) << 28) | index;
}

std::array<int, 3> allocate_conditions(int n, const std::array<double, 3>& mix) {
  if (n < 0) throw ConfigError("dataset size must be non-negative");
  double sum = 0.0;
  for (double p : mix) {
    if (!(p >= 0.0)) throw ConfigError("condition proportions must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("condition proportions must sum to 1");
  std::array<int, 3> counts{};
  std::array<double, 3> remainder{};
  int assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = n * mix[i];
    counts[i] = static_cast<int>(std::floor(exact + 1e-9));
    remainder[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (remainder[i] > remainder[best]) best = i;
    }
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  return counts;
}

SampleSource::SampleSource(DatasetSpec spec, CameraRig rig, CorruptionConfig corruption)
    : rig_(std::move(rig)), corruption_(corruption) {
  rig_.require_complete();
  const std::array<int, 3> counts = allocate_conditions(spec.n, spec.condition_mix);
  std::vector<Condition> conditions;
  for (Condition c : kConditions) conditions.insert(conditions.end(), counts[index_of(c)], c);
  // Fisher-Yates with an explicit generator so the order is reproducible.
  std::mt19937_64 engine(mix_seed(spec.split_seed, 0x5E0, static_cast<std::uint64_t>(spec.split)));
  for (std::size_t i = conditions.size(); i > 1; --i) {
    std::swap(conditions[i - 1], conditions[engine() % i]);
  }
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    entries_.push_back({scene_seed(spec.split_seed, spec.split, i), conditions[i]});
  }
}

MultiSpectralSample SampleSource::render(std::size_t i) const {
  if (!cache_.empty()) return cache_.at(i);
  const Entry& e = entry(i);
  return render_sample(generate_scene(e.scene_seed), rig_, e.condition, corruption_);
}

void SampleSource::cache_all() {
  if (!cache_.empty()) return;
  std::vector<MultiSpectralSample> rendered;
  rendered.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) rendered.push_back(render(i));
  cache_ = std::move(rendered);
}

SampleSource SampleSource::filtered(std::span<const Condition> keep) const {
  SampleSource out;
  out.rig_ = rig_;
  out.corruption_ = corruption_;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), entries_[i].condition) == keep.end()) continue;
    out.entries_.push_back(entries_[i]);
    if (!cache_.empty()) out.cache_.push_back(cache_[i]);
  }
  return out;
}

SampleSource make_dataset(int n, std::uint64_t split_seed, const std::array<double, 3>& condition_mix,
                          Split split, const CameraRig& rig, const CorruptionConfig& corruption) {
  return SampleSource(DatasetSpec{n, split_seed, condition_mix, split}, rig, corruption);
}

}  // namespace msdepth
