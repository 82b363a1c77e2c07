#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <utility>

#include <nlohmann/json.hpp>

#include "msdepth/types.hpp"

namespace msdepth {

/// Zero-skew pinhole camera. Pixel centers sit on integer coordinates with the
/// origin at the top-left pixel.
struct CameraModel {
  std::array<double, 9> K{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  int width = 1;
  int height = 1;

  double fx() const { return K[0]; }
  double fy() const { return K[4]; }
  double cx() const { return K[2]; }
  double cy() const { return K[5]; }

  /// Throws CalibrationError when the intrinsics break the camera invariants.
  void validate() const;

  /// Intrinsics for a map of `new_width` x `new_height` covering the same
  /// field of view: focal lengths and principal point scale per axis.
  CameraModel scaled_to(int new_width, int new_height) const;

  /// 3x3 intrinsic matrix as a tensor of the requested dtype.
  torch::Tensor matrix(torch::Dtype dtype = torch::kDouble) const;

  bool operator==(const CameraModel&) const = default;
};

CameraModel make_camera(double fx, double fy, double cx, double cy, int width, int height);

/// Rigid 4x4 transform, row-major, mapping points of one camera frame into another.
struct RigidTransform {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  static RigidTransform identity() { return {}; }
  static RigidTransform from_rotation_translation(const std::array<double, 9>& r,
                                                  const std::array<double, 3>& t);
  static RigidTransform translation(double x, double y, double z);
  /// Rotation about the camera y axis (yaw) in radians.
  static RigidTransform yaw(double radians);

  RigidTransform inverse() const;
  RigidTransform operator*(const RigidTransform& rhs) const;

  /// Largest deviation of R^T R from identity, plus the homogeneous row.
  double rigidity_error() const;
  bool is_identity() const;

  torch::Tensor matrix(torch::Dtype dtype = torch::kDouble) const;

  bool operator==(const RigidTransform&) const = default;
};

/// Extrinsics between ordered spectrum pairs. `transform(tgt, ref)` maps points
/// expressed in the tgt camera frame into the ref camera frame.
class RigCalibration {
 public:
  void set(Spectrum tgt, Spectrum ref, const RigidTransform& t) { extrinsic_[{tgt, ref}] = t; }
  bool has(Spectrum tgt, Spectrum ref) const;
  /// Identity for tgt == ref; throws CalibrationError when the pair is absent.
  const RigidTransform& transform(Spectrum tgt, Spectrum ref) const;
  /// Checks rigidity and pairwise inverse consistency of every stored entry.
  void validate(double tol = 1e-9) const;

  const std::map<std::pair<Spectrum, Spectrum>, RigidTransform>& entries() const { return extrinsic_; }

  bool operator==(const RigCalibration&) const = default;

 private:
  std::map<std::pair<Spectrum, Spectrum>, RigidTransform> extrinsic_;
};

/// Per-spectrum intrinsics plus the extrinsics between them.
struct CameraRig {
  std::array<CameraModel, 3> cameras;
  RigCalibration calib;

  const CameraModel& camera(Spectrum s) const { return cameras[index_of(s)]; }
  CameraModel& camera(Spectrum s) { return cameras[index_of(s)]; }

  /// Throws CalibrationError unless all three cameras and all six ordered pairs are present.
  void require_complete() const;

  /// Rig whose cameras are all placed by `poses` (camera-to-common frame);
  /// all six pairwise extrinsics are derived from them.
  static CameraRig from_poses(const std::array<CameraModel, 3>& cams,
                              const std::array<RigidTransform, 3>& poses);

  bool operator==(const CameraRig&) const = default;
};

/// Desk-scale default rig. Thermal is the common frame and has the widest field of view.
CameraRig default_rig();

// Calibration file: {"intrinsics": {"rgb": {"K": [9], "width", "height"}, ...},
//                    "extrinsics": {"rgb->thr": {"T": [16]}, ...}}
nlohmann::json rig_to_json(const CameraRig& rig);
CameraRig rig_from_json(const nlohmann::json& j);
CameraRig load_rig(const std::filesystem::path& path);
void save_rig(const CameraRig& rig, const std::filesystem::path& path);

/// Sub-pixel correspondences of every target pixel in the reference image plane.
struct FlowField {
  torch::Tensor coords;          // [B, H, W, 2] (u, v) in reference pixels
  torch::Tensor valid;           // [B, H, W] bool
  torch::Tensor projected_depth; // [B, H, W] depth of the target points in the reference frame
  int ref_width = 0;
  int ref_height = 0;

  std::int64_t valid_count() const { return valid.sum().item<std::int64_t>(); }
};

struct WarpResult {
  torch::Tensor data;   // [B, C, H, W], zero where invalid
  torch::Tensor valid;  // [B, H, W] bool
};

/// Projection flow from the target plane into the reference plane for each
/// target pixel and its depth. `depth_tgt` is [H, W] or [B, 1, H, W]; camera and
/// transform spans hold either one entry (shared) or one per batch element.
/// `tgt_valid` (optional, [B, H, W] or [H, W]) marks pixels whose depth is
/// meaningful; others come back invalid. Differentiable w.r.t. depth.
FlowField project_flow(const torch::Tensor& depth_tgt, std::span<const CameraModel> cam_tgt,
                       std::span<const CameraModel> cam_ref, std::span<const RigidTransform> tgt_to_ref,
                       const torch::Tensor& tgt_valid = {});

FlowField project_flow(const torch::Tensor& depth_tgt, const CameraModel& cam_tgt,
                       const CameraModel& cam_ref, const RigidTransform& tgt_to_ref,
                       const torch::Tensor& tgt_valid = {});

/// Bilinear resampling of `src` ([B, C, Hr, Wr]) at the flow coordinates. The
/// flow's reference frame must be Wr x Hr; its batch must match src or be 1.
/// Differentiable w.r.t. both `src` and the flow coordinates.
WarpResult inverse_warp(const torch::Tensor& src, const FlowField& flow);


/// Nearest subsampling of a full-resolution depth map to a feature grid of
/// stride `stride`: feature pixel j corresponds to full pixel stride * j.
torch::Tensor subsample_to_stride(const torch::Tensor& depth, int stride);

/// Resamples `src_map` (living in `cam_src`'s view, at any resolution) onto the
/// plane described by `cam_plane` and `depth_plane` ([B, 1, Hp, Wp] at any
/// resolution). Cameras are given at native resolution and rescaled to the
/// resolutions of the maps. Spans hold one or B entries.
WarpResult align_to_plane(const torch::Tensor& src_map, const torch::Tensor& depth_plane,
                          std::span<const CameraModel> cam_plane, std::span<const CameraModel> cam_src,
                          std::span<const RigidTransform> plane_to_src,
                          const torch::Tensor& plane_valid = {});

/// Single-rig convenience form; throws CalibrationError if the rig lacks the pair.
WarpResult align_to_plane(const torch::Tensor& src_map, const torch::Tensor& depth_plane,
                          Spectrum plane, Spectrum src, const CameraRig& rig,
                          const torch::Tensor& plane_valid = {});

}  // namespace msdepth
