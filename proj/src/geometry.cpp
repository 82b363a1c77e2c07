#include "msdepth/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

using torch::indexing::Slice;

constexpr double kRigidTolerance = 1e-6;

std::string pair_key(Spectrum tgt, Spectrum ref) {
  return std::string(to_string(tgt)) + "->" + std::string(to_string(ref));
}

template <typename T>
const T& pick(std::span<const T> items, std::int64_t b) {
  return items.size() == 1 ? items[0] : items[static_cast<std::size_t>(b)];
}

template <typename T>
void check_span(std::span<const T> items, std::int64_t batch, const char* what) {
  if (items.size() != 1 && static_cast<std::int64_t>(items.size()) != batch) {
    throw InterfaceError(std::string(what) + ": expected 1 or " + std::to_string(batch) +
                         " entries, got " + std::to_string(items.size()));
  }
}

torch::Tensor as_batched_depth(const torch::Tensor& depth) {
  if (depth.dim() == 2) return depth.unsqueeze(0).unsqueeze(0);
  if (depth.dim() == 4 && depth.size(1) == 1) return depth;
  throw InterfaceError("depth must be [H, W] or [B, 1, H, W]");
}

torch::Tensor as_batched_mask(const torch::Tensor& mask, std::int64_t batch, std::int64_t h,
                              std::int64_t w) {
  if (!mask.defined()) {
    return torch::ones({batch, h, w}, torch::kBool);
  }
  torch::Tensor m = mask.to(torch::kBool);
  if (m.dim() == 2) m = m.unsqueeze(0);
  if (m.dim() == 4 && m.size(1) == 1) m = m.squeeze(1);
  if (m.dim() != 3 || m.size(1) != h || m.size(2) != w) {
    throw InterfaceError("valid mask does not match the depth map");
  }
  return m.expand({batch, h, w});
}

}  // namespace

void CameraModel::validate() const {
  if (width <= 0 || height <= 0) throw CalibrationError("camera resolution must be positive");
  if (!(K[0] > 0.0) || !(K[4] > 0.0)) throw CalibrationError("focal lengths must be positive");
  if (K[1] != 0.0) throw CalibrationError("skewed intrinsics are not supported");
  if (K[3] != 0.0 || K[6] != 0.0 || K[7] != 0.0 || K[8] != 1.0) {
    throw CalibrationError("intrinsic matrix must have the form [[fx,0,cx],[0,fy,cy],[0,0,1]]");
  }
}

CameraModel CameraModel::scaled_to(int new_width, int new_height) const {
  if (new_width == width && new_height == height) return *this;
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  CameraModel out = *this;
  out.K[0] *= sx;
  out.K[2] *= sx;
  out.K[4] *= sy;
  out.K[5] *= sy;
  out.width = new_width;
  out.height = new_height;
  return out;
}

torch::Tensor CameraModel::matrix(torch::Dtype dtype) const {
  return torch::tensor(std::vector<double>(K.begin(), K.end()), torch::kDouble).view({3, 3}).to(dtype);
}

CameraModel make_camera(double fx, double fy, double cx, double cy, int width, int height) {
  CameraModel cam;
  cam.K = {fx, 0, cx, 0, fy, cy, 0, 0, 1};
  cam.width = width;
  cam.height = height;
  cam.validate();
  return cam;
}

RigidTransform RigidTransform::from_rotation_translation(const std::array<double, 9>& r,
                                                         const std::array<double, 3>& t) {
  RigidTransform out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out.m[i * 4 + j] = r[i * 3 + j];
    out.m[i * 4 + 3] = t[i];
  }
  return out;
}

RigidTransform RigidTransform::translation(double x, double y, double z) {
  RigidTransform out;
  out.m[3] = x;
  out.m[7] = y;
  out.m[11] = z;
  return out;
}

RigidTransform RigidTransform::yaw(double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return from_rotation_translation({c, 0, s, 0, 1, 0, -s, 0, c}, {0, 0, 0});
}

RigidTransform RigidTransform::inverse() const {
  // [R t]^-1 = [R^T, -R^T t]
  std::array<double, 9> rt{};
  std::array<double, 3> t{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) rt[i * 3 + j] = m[j * 4 + i];
  }
  for (int i = 0; i < 3; ++i) {
    t[i] = -(rt[i * 3 + 0] * m[3] + rt[i * 3 + 1] * m[7] + rt[i * 3 + 2] * m[11]);
  }
  return from_rotation_translation(rt, t);
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += m[i * 4 + k] * rhs.m[k * 4 + j];
      out.m[i * 4 + j] = acc;
    }
  }
  return out;
}

double RigidTransform::rigidity_error() const {
  double err = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += m[k * 4 + i] * m[k * 4 + j];
      err = std::max(err, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  err = std::max({err, std::abs(m[12]), std::abs(m[13]), std::abs(m[14]), std::abs(m[15] - 1.0)});
  // A reflection is orthonormal but not a rotation.
  const double det = m[0] * (m[5] * m[10] - m[6] * m[9]) - m[1] * (m[4] * m[10] - m[6] * m[8]) +
                     m[2] * (m[4] * m[9] - m[5] * m[8]);
  return std::max(err, std::abs(det - 1.0));
}

bool RigidTransform::is_identity() const { return *this == RigidTransform::identity(); }

torch::Tensor RigidTransform::matrix(torch::Dtype dtype) const {
  return torch::tensor(std::vector<double>(m.begin(), m.end()), torch::kDouble).view({4, 4}).to(dtype);
}

bool RigCalibration::has(Spectrum tgt, Spectrum ref) const {
  return tgt == ref || extrinsic_.contains({tgt, ref});
}

const RigidTransform& RigCalibration::transform(Spectrum tgt, Spectrum ref) const {
  static const RigidTransform kIdentity = RigidTransform::identity();
  if (tgt == ref) return kIdentity;
  auto it = extrinsic_.find({tgt, ref});
  if (it == extrinsic_.end()) {
    throw CalibrationError("rig has no extrinsic for pair " + pair_key(tgt, ref));
  }
  return it->second;
}

void RigCalibration::validate(double tol) const {
  for (const auto& [key, t] : extrinsic_) {
    const std::string name = pair_key(key.first, key.second);
    if (key.first == key.second) {
      for (int i = 0; i < 16; ++i) {
        if (std::abs(t.m[i] - RigidTransform::identity().m[i]) > tol) {
          throw CalibrationError("self transform " + name + " must be identity");
        }
      }
    }
    if (!(t.rigidity_error() <= tol)) throw CalibrationError("transform " + name + " is not rigid");
    auto back = extrinsic_.find({key.second, key.first});
    if (back != extrinsic_.end()) {
      const RigidTransform prod = t * back->second;
      for (int i = 0; i < 16; ++i) {
        if (std::abs(prod.m[i] - RigidTransform::identity().m[i]) > tol) {
          throw CalibrationError("transforms " + name + " and its reverse are not inverses");
        }
      }
    }
  }
}

void CameraRig::require_complete() const {
  for (Spectrum s : kSpectra) camera(s).validate();
  for (Spectrum a : kSpectra) {
    for (Spectrum b : kSpectra) {
      if (a != b && !calib.has(a, b)) {
        throw CalibrationError("incomplete rig: missing extrinsic " + pair_key(a, b));
      }
    }
  }
}

CameraRig CameraRig::from_poses(const std::array<CameraModel, 3>& cams,
                                const std::array<RigidTransform, 3>& poses) {
  CameraRig rig;
  rig.cameras = cams;
  for (Spectrum tgt : kSpectra) {
    for (Spectrum ref : kSpectra) {
      if (tgt == ref) continue;
      rig.calib.set(tgt, ref, poses[index_of(ref)].inverse() * poses[index_of(tgt)]);
    }
  }
  return rig;
}

CameraRig default_rig() {
  const std::array<CameraModel, 3> cams{
      make_camera(80.0, 80.0, 47.5, 31.5, 96, 64),  // rgb
      make_camera(66.0, 66.0, 43.5, 27.5, 88, 56),  // nir
      make_camera(40.0, 40.0, 39.5, 23.5, 80, 48),  // thr
  };
  const std::array<RigidTransform, 3> poses{
      RigidTransform::translation(-0.25, 0.0, 0.0) * RigidTransform::yaw(0.01),
      RigidTransform::translation(0.25, 0.02, 0.0) * RigidTransform::yaw(-0.01),
      RigidTransform::identity(),
  };
  return CameraRig::from_poses(cams, poses);
}

nlohmann::json rig_to_json(const CameraRig& rig) {
  nlohmann::json j;
  for (Spectrum s : kSpectra) {
    const CameraModel& cam = rig.camera(s);
    j["intrinsics"][std::string(to_string(s))] = {
        {"K", cam.K}, {"width", cam.width}, {"height", cam.height}};
  }
  j["extrinsics"] = nlohmann::json::object();
  for (const auto& [key, t] : rig.calib.entries()) {
    j["extrinsics"][pair_key(key.first, key.second)] = {{"T", t.m}};
  }
  return j;
}

CameraRig rig_from_json(const nlohmann::json& j) {
  CameraRig rig;
  try {
    for (Spectrum s : kSpectra) {
      const auto& e = j.at("intrinsics").at(std::string(to_string(s)));
      CameraModel cam;
      cam.K = e.at("K").get<std::array<double, 9>>();
      cam.width = e.at("width").get<int>();
      cam.height = e.at("height").get<int>();
      cam.validate();
      rig.camera(s) = cam;
    }
    if (j.contains("extrinsics")) {
      for (const auto& [key, value] : j.at("extrinsics").items()) {
        const auto arrow = key.find("->");
        if (arrow == std::string::npos) throw CalibrationError("bad extrinsic key '" + key + "'");
        const Spectrum tgt = parse_spectrum(key.substr(0, arrow));
        const Spectrum ref = parse_spectrum(key.substr(arrow + 2));
        RigidTransform t;
        t.m = value.at("T").get<std::array<double, 16>>();
        rig.calib.set(tgt, ref, t);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CalibrationError(std::string("malformed calibration: ") + e.what());
  } catch (const ConfigError& e) {
    throw CalibrationError(e.what());
  }
  rig.calib.validate(1e-9);
  return rig;
}

CameraRig load_rig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CalibrationError("cannot open calibration file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CalibrationError("calibration file " + path.string() + " is not JSON: " + e.what());
  }
  return rig_from_json(j);
}

void save_rig(const CameraRig& rig, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << rig_to_json(rig).dump(2) << '\n';
}

FlowField project_flow(const torch::Tensor& depth_tgt, std::span<const CameraModel> cam_tgt,
                       std::span<const CameraModel> cam_ref, std::span<const RigidTransform> tgt_to_ref,
                       const torch::Tensor& tgt_valid) {
  const torch::Tensor depth = as_batched_depth(depth_tgt);
  const std::int64_t batch = depth.size(0);
  const std::int64_t h = depth.size(2);
  const std::int64_t w = depth.size(3);
  check_span(cam_tgt, batch, "target cameras");
  check_span(cam_ref, batch, "reference cameras");
  check_span(tgt_to_ref, batch, "transforms");

  const int ref_w = cam_ref[0].width;
  const int ref_h = cam_ref[0].height;
  bool identity = true;
  for (std::int64_t b = 0; b < batch; ++b) {
    const CameraModel& ct = pick(cam_tgt, b);
    const CameraModel& cr = pick(cam_ref, b);
    ct.validate();
    cr.validate();
    if (ct.width != w || ct.height != h) {
      throw InterfaceError("target camera resolution does not match the depth map");
    }
    if (cr.width != ref_w || cr.height != ref_h) {
      throw InterfaceError("reference cameras must share one resolution");
    }
    const RigidTransform& t = pick(tgt_to_ref, b);
    if (!(t.rigidity_error() <= kRigidTolerance)) {
      throw CalibrationError("extrinsic transform is not rigid");
    }
    identity = identity && t.is_identity() && ct == cr;
  }

  const torch::Tensor mask = as_batched_mask(tgt_valid, batch, h, w);
  if ((depth.squeeze(1).le(0) & mask).any().item<bool>()) {
    throw DomainError("non-positive depth at a valid target pixel");
  }

  const auto opts = torch::TensorOptions().dtype(depth.scalar_type());
  FlowField flow;
  flow.ref_width = ref_w;
  flow.ref_height = ref_h;

  if (identity) {
    auto grid = torch::meshgrid({torch::arange(h, opts), torch::arange(w, opts)}, "ij");
    flow.coords = torch::stack({grid[1], grid[0]}, -1).unsqueeze(0).expand({batch, h, w, 2});
    flow.valid = mask & depth.squeeze(1).gt(0);
    flow.projected_depth = depth.squeeze(1);
    return flow;
  }

  std::vector<torch::Tensor> kinv, kref, rot, trans;
  for (std::int64_t b = 0; b < batch; ++b) {
    const CameraModel& ct = pick(cam_tgt, b);
    const double fx = ct.fx(), fy = ct.fy(), cx = ct.cx(), cy = ct.cy();
    kinv.push_back(torch::tensor({1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0},
                                 torch::kDouble)
                       .view({3, 3}));
    kref.push_back(pick(cam_ref, b).matrix());
    const torch::Tensor t = pick(tgt_to_ref, b).matrix();
    rot.push_back(t.index({Slice(0, 3), Slice(0, 3)}));
    trans.push_back(t.index({Slice(0, 3), Slice(3, 4)}));
  }
  const auto to = [&](std::vector<torch::Tensor>& v) { return torch::stack(v).to(opts); };
  const torch::Tensor k_inv = to(kinv), k_ref = to(kref), r = to(rot), t = to(trans);

  auto grid = torch::meshgrid({torch::arange(h, opts), torch::arange(w, opts)}, "ij");
  const torch::Tensor pix =
      torch::stack({grid[1].reshape(-1), grid[0].reshape(-1), torch::ones({h * w}, opts)});  // [3, HW]

  const torch::Tensor rays = torch::matmul(k_inv, pix);               // [B, 3, HW]
  const torch::Tensor pts = rays * depth.reshape({batch, 1, h * w});  // target frame
  const torch::Tensor pts_ref = torch::matmul(r, pts) + t;
  const torch::Tensor z = pts_ref.select(1, 2);
  const torch::Tensor in_front = z.gt(0);
  const torch::Tensor z_safe = torch::where(in_front, z, torch::ones_like(z));
  const torch::Tensor proj = torch::matmul(k_ref, pts_ref);
  const torch::Tensor u = proj.select(1, 0) / z_safe;
  const torch::Tensor v = proj.select(1, 1) / z_safe;

  const torch::Tensor inside = u.ge(0) & u.le(ref_w - 1) & v.ge(0) & v.le(ref_h - 1);
  flow.coords = torch::stack({u, v}, -1).view({batch, h, w, 2});
  flow.valid = (in_front & inside).view({batch, h, w}) & mask;
  flow.projected_depth = z.view({batch, h, w});
  return flow;
}

FlowField project_flow(const torch::Tensor& depth_tgt, const CameraModel& cam_tgt,
                       const CameraModel& cam_ref, const RigidTransform& tgt_to_ref,
                       const torch::Tensor& tgt_valid) {
  return project_flow(depth_tgt, std::span(&cam_tgt, 1), std::span(&cam_ref, 1),
                      std::span(&tgt_to_ref, 1), tgt_valid);
}

WarpResult inverse_warp(const torch::Tensor& src, const FlowField& flow) {
  if (src.dim() != 4) throw InterfaceError("inverse_warp expects src as [B, C, H, W]");
  const std::int64_t src_h = src.size(2);
  const std::int64_t src_w = src.size(3);
  if (src_h != flow.ref_height || src_w != flow.ref_width) {
    throw InterfaceError("flow reference frame " + std::to_string(flow.ref_width) + "x" +
                         std::to_string(flow.ref_height) + " does not match source map " +
                         std::to_string(src_w) + "x" + std::to_string(src_h));
  }
  const std::int64_t fb = flow.coords.size(0);
  const std::int64_t batch = std::max(src.size(0), fb);
  if ((src.size(0) != batch && src.size(0) != 1) || (fb != batch && fb != 1)) {
    throw InterfaceError("flow and source batch sizes differ");
  }
  const std::int64_t channels = src.size(1);
  const std::int64_t h = flow.coords.size(1);
  const std::int64_t w = flow.coords.size(2);

  const torch::Tensor valid = flow.valid.expand({batch, h, w});
  const torch::Tensor coords = flow.coords.to(src.scalar_type()).expand({batch, h, w, 2});
  const torch::Tensor zero = torch::zeros({}, coords.options());
  const torch::Tensor u = torch::where(valid, coords.select(3, 0), zero);
  const torch::Tensor v = torch::where(valid, coords.select(3, 1), zero);

  const torch::Tensor x0 = u.detach().floor().clamp(0, src_w - 1);
  const torch::Tensor y0 = v.detach().floor().clamp(0, src_h - 1);
  const torch::Tensor x1 = (x0 + 1).clamp_max(src_w - 1);
  const torch::Tensor y1 = (y0 + 1).clamp_max(src_h - 1);
  const torch::Tensor wx1 = (u - x0).unsqueeze(1);
  const torch::Tensor wy1 = (v - y0).unsqueeze(1);
  const torch::Tensor wx0 = 1 - wx1;
  const torch::Tensor wy0 = 1 - wy1;

  const torch::Tensor flat = src.expand({batch, channels, src_h, src_w}).reshape({batch, channels, -1});
  const auto sample = [&](const torch::Tensor& xs, const torch::Tensor& ys) {
    const torch::Tensor idx = (ys * src_w + xs).to(torch::kLong).view({batch, 1, h * w});
    return flat.gather(2, idx.expand({batch, channels, h * w})).view({batch, channels, h, w});
  };

  torch::Tensor out = wy0 * (wx0 * sample(x0, y0) + wx1 * sample(x1, y0)) +
                      wy1 * (wx0 * sample(x0, y1) + wx1 * sample(x1, y1));
  out = torch::where(valid.unsqueeze(1), out, torch::zeros({}, out.options()));
  return {out, valid};
}

torch::Tensor subsample_to_stride(const torch::Tensor& depth, int stride) {
  if (stride < 1) throw InterfaceError("stride must be positive");
  if (stride == 1) return depth;
  return depth.index({"...", Slice(0, torch::indexing::None, stride), Slice(0, torch::indexing::None, stride)});
}

WarpResult align_to_plane(const torch::Tensor& src_map, const torch::Tensor& depth_plane,
                          std::span<const CameraModel> cam_plane, std::span<const CameraModel> cam_src,
                          std::span<const RigidTransform> plane_to_src, const torch::Tensor& plane_valid) {
  const torch::Tensor depth = as_batched_depth(depth_plane);
  const int plane_w = static_cast<int>(depth.size(3));
  const int plane_h = static_cast<int>(depth.size(2));
  const int src_w = static_cast<int>(src_map.size(-1));
  const int src_h = static_cast<int>(src_map.size(-2));
  std::vector<CameraModel> plane_cams, src_cams;
  for (const CameraModel& c : cam_plane) plane_cams.push_back(c.scaled_to(plane_w, plane_h));
  for (const CameraModel& c : cam_src) src_cams.push_back(c.scaled_to(src_w, src_h));
  const FlowField flow = project_flow(depth, plane_cams, src_cams, plane_to_src, plane_valid);
  return inverse_warp(src_map, flow);
}

WarpResult align_to_plane(const torch::Tensor& src_map, const torch::Tensor& depth_plane, Spectrum plane,
                          Spectrum src, const CameraRig& rig, const torch::Tensor& plane_valid) {
  const RigidTransform& t = rig.calib.transform(plane, src);
  return align_to_plane(src_map, depth_plane, std::span(&rig.camera(plane), 1),
                        std::span(&rig.camera(src), 1), std::span(&t, 1), plane_valid);
}

}  // namespace msdepth
