#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oracle {

double bilinear(const std::vector<double>& map, int h, int w, double u, double v) {
  const int x0 = std::clamp(static_cast<int>(std::floor(u)), 0, w - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(v)), 0, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double ax = u - x0;
  const double ay = v - y0;
  const auto at = [&](int x, int y) { return map[static_cast<std::size_t>(y) * w + x]; };
  return (1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x1, y0)) + ay * ((1 - ax) * at(x0, y1) + ax * at(x1, y1));
}

Projection project_pixel(const msdepth::CameraModel& tgt, const msdepth::CameraModel& ref,
                         const msdepth::RigidTransform& t, double x, double y, double d) {
  const double px = (x - tgt.cx()) / tgt.fx() * d;
  const double py = (y - tgt.cy()) / tgt.fy() * d;
  const double pz = d;
  const auto& m = t.m;
  const double qx = m[0] * px + m[1] * py + m[2] * pz + m[3];
  const double qy = m[4] * px + m[5] * py + m[6] * pz + m[7];
  const double qz = m[8] * px + m[9] * py + m[10] * pz + m[11];
  return {ref.fx() * qx / qz + ref.cx(), ref.fy() * qy / qz + ref.cy(), qz};
}

double silog(const std::vector<double>& pred, const std::vector<double>& gt, const std::vector<bool>& valid) {
  double s = 0, s2 = 0;
  int n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    const double g = std::log(pred[i]) - std::log(gt[i]);
    s += g;
    s2 += g * g;
    ++n;
  }
  const double mean = s / n;
  return s2 / n - 0.85 * mean * mean;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double info_nce(const std::vector<double>& q, const std::vector<std::vector<double>>& pos,
                const std::vector<std::vector<double>>& neg, double tau) {
  double p = 0, all = 0;
  for (const auto& k : pos) p += std::exp(dot(q, k) / tau);
  all = p;
  for (const auto& k : neg) all += std::exp(dot(q, k) / tau);
  return -std::log(p / all);
}

double geometric(const std::vector<double>& a, const std::vector<double>& b, const std::vector<bool>& valid) {
  double s = 0;
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!valid[i]) continue;
    s += std::abs(a[i] - b[i]) / (a[i] + b[i]);
    ++n;
  }
  return s / n;
}

Metrics metrics(const std::vector<double>& pred, const std::vector<double>& gt, double min_depth, double cap) {
  Metrics m;
  double sq = 0, lg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], g = gt[i];
    if (g < min_depth || g > cap) continue;
    ++m.n;
    m.abs_rel += std::abs(p - g) / g;
    m.sq_rel += (p - g) * (p - g) / g;
    sq += (p - g) * (p - g);
    lg += (std::log(p) - std::log(g)) * (std::log(p) - std::log(g));
    const double r = std::max(p / g, g / p);
    m.d1 += r < 1.25;
    m.d2 += r < 1.25 * 1.25;
    m.d3 += r < 1.25 * 1.25 * 1.25;
  }
  const double n = static_cast<double>(m.n);
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(sq / n);
  m.rmse_log = std::sqrt(lg / n);
  m.d1 /= n;
  m.d2 /= n;
  m.d3 /= n;
  return m;
}

std::vector<double> to_vector(const torch::Tensor& t) {
  const torch::Tensor c = t.detach().to(torch::kDouble).contiguous().reshape(-1);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

std::vector<bool> to_mask(const torch::Tensor& t) {
  const torch::Tensor c = t.to(torch::kBool).contiguous().reshape(-1);
  std::vector<bool> out(static_cast<std::size_t>(c.numel()));
  const bool* p = c.data_ptr<bool>();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i];
  return out;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

GradCheck finite_difference(const ScalarFn& f, const torch::Tensor& x, int coords, std::uint64_t seed,
                            double step) {
  torch::Tensor leaf = x.detach().to(torch::kDouble).clone().requires_grad_(true);
  f(leaf).backward();
  const torch::Tensor grad = leaf.grad().reshape(-1);

  torch::Tensor probe = leaf.detach().clone();
  torch::Tensor flat = probe.view(-1);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, flat.numel() - 1);

  GradCheck out;
  torch::NoGradGuard no_grad;
  for (int i = 0; i < coords; ++i) {
    const std::int64_t k = coords >= flat.numel() ? i % flat.numel() : pick(rng);
    const double orig = flat[k].item<double>();
    flat[k] = orig + step;
    const double up = f(probe).item<double>();
    flat[k] = orig - step;
    const double down = f(probe).item<double>();
    flat[k] = orig;
    const double numeric = (up - down) / (2 * step);
    const double analytic = grad[k].item<double>();
    out.max_rel_err = std::max(out.max_rel_err, relative_error(analytic, numeric));
    out.max_abs_grad = std::max(out.max_abs_grad, std::abs(analytic));
    ++out.checked;
  }
  return out;
}

Coherence& Coherence::operator+=(const Coherence& o) {
  covisible += o.covisible;
  occluded += o.occluded;
  compared += o.compared;
  agree += o.agree;
  return *this;
}

Coherence coherence(const msdepth::MultiSpectralSample& sample, msdepth::Spectrum tgt, msdepth::Spectrum ref) {
  using namespace msdepth;
  const SpectralImage& a = sample.plane(tgt);
  const SpectralImage& b = sample.plane(ref);
  const torch::Tensor depth_a = a.depth.to(torch::kDouble).unsqueeze(0);
  const FlowField flow = project_flow(torch::where(a.valid, depth_a, torch::ones_like(depth_a)),
                                      sample.rig.camera(tgt), sample.rig.camera(ref),
                                      sample.rig.calib.transform(tgt, ref), a.valid);
  const WarpResult warped = inverse_warp(b.depth.to(torch::kDouble).unsqueeze(0), flow);
  const WarpResult support = inverse_warp(b.valid.to(torch::kDouble).view({1, 1, b.valid.size(0), b.valid.size(1)}), flow);
  const torch::Tensor covisible = warped.valid & support.data.squeeze(1).gt(1.0 - 1e-9);
  const torch::Tensor z = flow.projected_depth;
  const torch::Tensor rel = (warped.data.squeeze(1) - z).abs() / z.abs().clamp_min(1e-12);
  const torch::Tensor occluded = covisible & rel.gt(0.05);
  const torch::Tensor compared = covisible & ~occluded;

  Coherence out;
  out.covisible = covisible.sum().item<std::int64_t>();
  out.occluded = occluded.sum().item<std::int64_t>();
  out.compared = compared.sum().item<std::int64_t>();
  out.agree = (compared & rel.le(0.01)).sum().item<std::int64_t>();
  return out;
}

Coherence coherence(const msdepth::MultiSpectralSample& sample) {
  Coherence total;
  for (msdepth::Spectrum t : msdepth::kSpectra) {
    for (msdepth::Spectrum r : msdepth::kSpectra) {
      if (t != r) total += coherence(sample, t, r);
    }
  }
  return total;
}

torch::Tensor Gen::tensor(torch::IntArrayRef shape, double lo, double hi) {
  torch::Tensor t = torch::empty(shape, torch::kDouble);
  double* p = t.data_ptr<double>();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = uniform(lo, hi);
  return t;
}

torch::Tensor Gen::mask(torch::IntArrayRef shape, double p_true) {
  torch::Tensor t = torch::empty(shape, torch::kBool);
  bool* p = t.data_ptr<bool>();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = uniform(0, 1) < p_true;
  return t;
}

msdepth::CameraModel Gen::camera(int width, int height) {
  const double f = uniform(0.6, 1.4) * width;
  return msdepth::make_camera(f, f * uniform(0.9, 1.1), (width - 1) / 2.0 + uniform(-2, 2),
                              (height - 1) / 2.0 + uniform(-2, 2), width, height);
}

msdepth::RigidTransform Gen::rigid(double max_angle, double max_shift) {
  std::array<double, 3> axis{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  for (double& a : axis) a /= std::max(n, 1e-9);
  const double angle = uniform(-max_angle, max_angle);
  const double c = std::cos(angle), s = std::sin(angle), k = 1 - c;
  const auto [x, y, z] = axis;
  const std::array<double, 9> r{c + x * x * k,     x * y * k - z * s, x * z * k + y * s,
                                y * x * k + z * s, c + y * y * k,     y * z * k - x * s,
                                z * x * k - y * s, z * y * k + x * s, c + z * z * k};
  return msdepth::RigidTransform::from_rotation_translation(
      r, {uniform(-max_shift, max_shift), uniform(-max_shift, max_shift), uniform(-max_shift, max_shift)});
}

std::string Gen::label(int max_len) {
  static constexpr std::string_view kChars = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-+.";
  const int n = integer(1, max_len);
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(kChars[static_cast<std::size_t>(integer(0, kChars.size() - 1))]);
  return s;
}

msdepth::MetricReport Gen::report() {
  msdepth::MetricReport r;
  static const std::array<const char*, 4> kModalities{"rgb", "nir", "thr", "fused"};
  static const std::array<const char*, 4> kConds{"day", "night", "rain", "Avg"};
  r.modality = integer(0, 4) == 0 ? label(12) : kModalities[static_cast<std::size_t>(integer(0, 3))];
  r.condition = kConds[static_cast<std::size_t>(integer(0, 3))];
  const auto wild = [&] {
    switch (integer(0, 3)) {
      case 0: return 0.0;
      case 1: return uniform(0, 1) * std::pow(10.0, integer(-300, 300));
      case 2: return std::nextafter(uniform(0, 100), std::numeric_limits<double>::infinity());
      default: return uniform(0, 50);
    }
  };
  r.abs_rel = wild();
  r.sq_rel = wild();
  r.rmse = wild();
  r.rmse_log = wild();
  r.d1 = uniform(0, 1);
  r.d2 = uniform(r.d1, 1);
  r.d3 = uniform(r.d2, 1);
  r.n_pixels = static_cast<std::int64_t>(bits() >> 2);
  return r;
}

}  // namespace oracle
