#include "testing.hpp"

#include <cmath>

#include "msdepth/errors.hpp"
#include "msdepth/geometry.hpp"
#include "oracles.hpp"

using namespace msdepth;

namespace {

const CameraModel kCam = make_camera(100, 100, 50, 50, 100, 100);

torch::Tensor full(std::int64_t h, std::int64_t w, double v) { return torch::full({h, w}, v, torch::kDouble); }

// Depth of the plane n.X = c seen by `cam`, for every pixel.
torch::Tensor plane_depth(const CameraModel& cam, const std::array<double, 3>& n, double c) {
  torch::Tensor d = torch::empty({cam.height, cam.width}, torch::kDouble);
  auto a = d.accessor<double, 2>();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const double rx = (x - cam.cx()) / cam.fx(), ry = (y - cam.cy()) / cam.fy();
      a[y][x] = c / (n[0] * rx + n[1] * ry + n[2]);
    }
  }
  return d;
}

// The same plane expressed in the frame reached through `t`.
std::pair<std::array<double, 3>, double> move_plane(const RigidTransform& t, const std::array<double, 3>& n,
                                                    double c) {
  std::array<double, 3> nb{};
  for (int i = 0; i < 3; ++i) nb[i] = t.m[i * 4] * n[0] + t.m[i * 4 + 1] * n[1] + t.m[i * 4 + 2] * n[2];
  return {nb, c + nb[0] * t.m[3] + nb[1] * t.m[7] + nb[2] * t.m[11]};
}

}  // namespace

TEST_CASE("identity calibration gives the exact pixel grid") {
  oracle::Gen gen(1);
  for (int trial = 0; trial < 5; ++trial) {
    const CameraModel cam = gen.camera(gen.integer(3, 30), gen.integer(3, 30));
    const torch::Tensor depth = gen.tensor({cam.height, cam.width}, 0.5, 50.0);
    const FlowField f = project_flow(depth, cam, cam, RigidTransform::identity());
    const auto c = f.coords.accessor<double, 4>();
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        CHECK(c[0][y][x][0] == x);
        CHECK(c[0][y][x][1] == y);
      }
    }
    CHECK(f.valid.all().item<bool>());
  }
}

TEST_CASE("unit baseline shifts the principal pixel by ten pixels") {
  const FlowField f = project_flow(full(100, 100, 10.0), kCam, kCam, RigidTransform::translation(1, 0, 0));
  CHECK(std::abs(f.coords[0][50][50][0].item<double>() - 60.0) <= 1e-9);
  CHECK(std::abs(f.coords[0][50][50][1].item<double>() - 50.0) <= 1e-9);
  CHECK(f.valid[0][50][50].item<bool>());
}

TEST_CASE("points pushed behind the reference camera are invalid") {
  const FlowField f = project_flow(full(100, 100, 10.0), kCam, kCam, RigidTransform::translation(0, 0, -20));
  CHECK(f.valid_count() == 0);
}

TEST_CASE("projection matches the per-pixel oracle") {
  oracle::Gen gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const CameraModel tgt = gen.camera(gen.integer(4, 20), gen.integer(4, 20));
    const CameraModel ref = gen.camera(gen.integer(4, 20), gen.integer(4, 20));
    const RigidTransform t = gen.rigid(0.2, 0.5);
    const torch::Tensor depth = gen.tensor({tgt.height, tgt.width}, 1.0, 30.0);
    const FlowField f = project_flow(depth, tgt, ref, t);
    const auto d = depth.accessor<double, 2>();
    const auto c = f.coords.accessor<double, 4>();
    const auto v = f.valid.accessor<bool, 3>();
    for (int y = 0; y < tgt.height; ++y) {
      for (int x = 0; x < tgt.width; ++x) {
        const oracle::Projection p = oracle::project_pixel(tgt, ref, t, x, y, d[y][x]);
        const bool inside = p.z > 0 && p.u >= 0 && p.u <= ref.width - 1 && p.v >= 0 && p.v <= ref.height - 1;
        REQUIRE(v[0][y][x] == inside);
        if (!inside) continue;
        CHECK(std::abs(c[0][y][x][0] - p.u) <= 1e-9 * std::max(1.0, std::abs(p.u)));
        CHECK(std::abs(c[0][y][x][1] - p.v) <= 1e-9 * std::max(1.0, std::abs(p.v)));
        CHECK(std::abs(f.projected_depth[0][y][x].item<double>() - p.z) <= 1e-9 * p.z);
      }
    }
  }
}

TEST_CASE("valid coordinates stay inside the reference frame") {
  oracle::Gen gen(3);
  for (int trial = 0; trial < 30; ++trial) {
    const CameraModel tgt = gen.camera(12, 9);
    const CameraModel ref = gen.camera(10, 11);
    const FlowField f = project_flow(gen.tensor({9, 12}, 0.5, 20), tgt, ref, gen.rigid(0.5, 2.0));
    const torch::Tensor u = f.coords.select(3, 0).masked_select(f.valid);
    const torch::Tensor v = f.coords.select(3, 1).masked_select(f.valid);
    if (u.numel() == 0) continue;
    CHECK(u.min().item<double>() >= 0);
    CHECK(u.max().item<double>() <= ref.width - 1);
    CHECK(v.min().item<double>() >= 0);
    CHECK(v.max().item<double>() <= ref.height - 1);
  }
}

TEST_CASE("shrinking the reference frame never validates a pixel") {
  oracle::Gen gen(4);
  for (int trial = 0; trial < 30; ++trial) {
    const CameraModel tgt = gen.camera(15, 12);
    CameraModel ref = gen.camera(16, 14);
    CameraModel small = ref;
    small.width = gen.integer(1, ref.width);
    small.height = gen.integer(1, ref.height);
    const torch::Tensor depth = gen.tensor({12, 15}, 0.5, 20);
    const RigidTransform t = gen.rigid(0.3, 1.0);
    const FlowField big = project_flow(depth, tgt, ref, t);
    const FlowField cut = project_flow(depth, tgt, small, t);
    CHECK_FALSE((cut.valid & ~big.valid).any().item<bool>());
  }
}

TEST_CASE("project_flow rejects bad inputs") {
  RigidTransform skew = RigidTransform::identity();
  skew.m[1] = 1e-3;
  CHECK_THROWS_AS(project_flow(full(100, 100, 10.0), kCam, kCam, skew), CalibrationError);

  torch::Tensor depth = full(100, 100, 10.0);
  depth[3][4] = 0.0;
  CHECK_THROWS_AS(project_flow(depth, kCam, kCam, RigidTransform::translation(1, 0, 0)), DomainError);
  torch::Tensor valid = torch::ones({100, 100}, torch::kBool);
  valid[3][4] = false;
  const FlowField f = project_flow(depth, kCam, kCam, RigidTransform::translation(1, 0, 0), valid);
  CHECK_FALSE(f.valid[0][3][4].item<bool>());

  CHECK_THROWS_AS(make_camera(0, 100, 50, 50, 100, 100), CalibrationError);
  CHECK_THROWS_AS(project_flow(full(10, 10, 1.0), kCam, kCam, RigidTransform::identity()), InterfaceError);
}

TEST_CASE("inverse_warp on the identity grid returns the source") {
  oracle::Gen gen(5);
  const CameraModel cam = gen.camera(9, 7);
  const FlowField f = project_flow(gen.tensor({7, 9}, 1, 5), cam, cam, RigidTransform::identity());
  const torch::Tensor src = gen.tensor({1, 3, 7, 9});
  const WarpResult w = inverse_warp(src, f);
  CHECK(torch::equal(w.data, src));
  CHECK(w.valid.all().item<bool>());
}

TEST_CASE("half-pixel shift of a map linear in u gives neighbor midpoints") {
  const torch::Tensor src = torch::arange(6, torch::kDouble).mul(3.0).add(1.0).view({1, 1, 1, 6}).expand({1, 1, 4, 6});
  FlowField f;
  f.ref_width = 6;
  f.ref_height = 4;
  auto grid = torch::meshgrid({torch::arange(4, torch::kDouble), torch::arange(5, torch::kDouble)}, "ij");
  f.coords = torch::stack({grid[1] + 0.5, grid[0]}, -1).unsqueeze(0);
  f.valid = torch::ones({1, 4, 5}, torch::kBool);
  const WarpResult w = inverse_warp(src.contiguous(), f);
  for (int x = 0; x < 5; ++x) {
    const double mid = 0.5 * ((3.0 * x + 1) + (3.0 * (x + 1) + 1));
    CHECK(std::abs(w.data[0][0][2][x].item<double>() - mid) <= 1e-12);
  }
}

TEST_CASE("inverse_warp matches the bilinear oracle on random 5x5 cases") {
  oracle::Gen gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    const torch::Tensor src = gen.tensor({1, 1, 5, 5}, -3, 3);
    FlowField f;
    f.ref_width = 5;
    f.ref_height = 5;
    f.coords = gen.tensor({1, 5, 5, 2}, 0.0, 4.0);
    f.valid = torch::ones({1, 5, 5}, torch::kBool);
    const WarpResult w = inverse_warp(src, f);
    const std::vector<double> map = oracle::to_vector(src);
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 5; ++x) {
        const double u = f.coords[0][y][x][0].item<double>(), v = f.coords[0][y][x][1].item<double>();
        CHECK(std::abs(w.data[0][0][y][x].item<double>() - oracle::bilinear(map, 5, 5, u, v)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("warped data is zero off the valid mask") {
  oracle::Gen gen(7);
  const CameraModel cam = gen.camera(12, 10);
  const FlowField f = project_flow(gen.tensor({10, 12}, 1, 4), cam, cam, RigidTransform::translation(0.8, 0.1, 0));
  const WarpResult w = inverse_warp(gen.tensor({1, 4, 10, 12}, 1, 2), f);
  REQUIRE(w.valid.logical_not().any().item<bool>());
  CHECK(w.data.masked_select(w.valid.logical_not().unsqueeze(1).expand_as(w.data)).abs().max().item<double>() == 0);
}

TEST_CASE("inverse_warp rejects a source of the wrong frame") {
  const FlowField f = project_flow(full(100, 100, 10.0), kCam, kCam, RigidTransform::identity());
  CHECK_THROWS_AS(inverse_warp(torch::zeros({1, 1, 99, 100}), f), InterfaceError);
  CHECK_THROWS_AS(inverse_warp(torch::zeros({100, 100}), f), InterfaceError);
}

TEST_CASE("warp gradient with respect to depth matches finite differences") {
  oracle::Gen gen(8);
  const CameraModel tgt = make_camera(30, 30, 9.5, 7.5, 20, 16);
  const CameraModel ref = make_camera(28, 29, 10.5, 8, 22, 17);
  const RigidTransform t = gen.rigid(0.05, 0.3);
  const torch::Tensor src = gen.tensor({1, 2, 17, 22}, -1, 1);
  const torch::Tensor weights = gen.tensor({1, 2, 16, 20});
  const torch::Tensor depth = gen.tensor({16, 20}, 4, 8);
  const auto fn = [&](const torch::Tensor& d) {
    return (inverse_warp(src, project_flow(d, tgt, ref, t)).data * weights).sum();
  };
  const oracle::GradCheck r = oracle::finite_difference(fn, depth, 100, 11);
  CHECK(r.checked == 100);
  CHECK(r.max_abs_grad > 0);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("warp gradient with respect to the source matches finite differences") {
  oracle::Gen gen(9);
  const CameraModel cam = make_camera(30, 30, 9.5, 7.5, 20, 16);
  const FlowField f = project_flow(gen.tensor({16, 20}, 4, 8), cam, cam, gen.rigid(0.05, 0.3));
  const torch::Tensor weights = gen.tensor({1, 2, 16, 20});
  const auto fn = [&](const torch::Tensor& s) { return (inverse_warp(s, f).data * weights).sum(); };
  const oracle::GradCheck r = oracle::finite_difference(fn, gen.tensor({1, 2, 16, 20}), 100, 12);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("warping there and back recovers the map within interpolation error") {
  oracle::Gen gen(10);
  for (int trial = 0; trial < 10; ++trial) {
    const CameraModel a = gen.camera(40, 30);
    const CameraModel b = gen.camera(36, 28);
    const RigidTransform a_to_b = gen.rigid(0.05, 0.3);
    const std::array<double, 3> n{gen.uniform(-0.2, 0.2), gen.uniform(-0.2, 0.2), 1.0};
    const double c = gen.uniform(6, 12);
    const auto [nb, cb] = move_plane(a_to_b, n, c);
    const torch::Tensor depth_a = plane_depth(a, n, c);
    const torch::Tensor depth_b = plane_depth(b, nb, cb);

    // Smooth map on a with per-pixel Lipschitz bound lip.
    auto grid = torch::meshgrid({torch::arange(30, torch::kDouble), torch::arange(40, torch::kDouble)}, "ij");
    const torch::Tensor map = (grid[1] * 0.3).sin() + (grid[0] * 0.2).cos();
    const double lip = std::hypot(0.3, 0.2);
    const double scale = std::max(a.fx() / b.fx(), a.fy() / b.fy());

    const WarpResult on_b = inverse_warp(map.view({1, 1, 30, 40}), project_flow(depth_b, b, a, a_to_b.inverse()));
    const FlowField back = project_flow(depth_a, a, b, a_to_b);
    const WarpResult on_a = inverse_warp(on_b.data, back);
    const WarpResult support = inverse_warp(on_b.valid.to(torch::kDouble).unsqueeze(1), back);
    const torch::Tensor both = on_a.valid & support.data.squeeze(1).gt(1.0 - 1e-9);
    REQUIRE(both.sum().item<std::int64_t>() > 100);
    const double err = (on_a.data.squeeze(1) - map).abs().masked_select(both).max().item<double>();
    CHECK(err <= 2.0 * lip * std::max(1.0, scale));
  }
}

TEST_CASE("align_to_plane") {
  const CameraRig rig = default_rig();
  oracle::Gen gen(11);
  SUBCASE("self alignment is the identity") {
    const torch::Tensor src = gen.tensor({1, 5, 48, 80});
    const WarpResult w = align_to_plane(src, gen.tensor({1, 1, 48, 80}, 1, 20), Spectrum::Thr, Spectrum::Thr, rig);
    CHECK((w.data - src).abs().max().item<double>() <= 1e-6);
  }
  SUBCASE("constant maps stay constant") {
    const torch::Tensor src = torch::full({1, 3, 8, 12}, 2.5, torch::kDouble);
    const WarpResult w = align_to_plane(src, gen.tensor({1, 1, 6, 10}, 3, 20), Spectrum::Thr, Spectrum::Rgb, rig);
    REQUIRE(w.valid.any().item<bool>());
    const torch::Tensor vals = w.data.masked_select(w.valid.unsqueeze(1).expand_as(w.data));
    CHECK((vals - 2.5).abs().max().item<double>() <= 1e-12);
  }
  SUBCASE("missing pair") {
    CameraRig partial = rig;
    partial.calib = RigCalibration{};
    CHECK_THROWS_AS(align_to_plane(torch::zeros({1, 1, 64, 96}), torch::ones({1, 1, 48, 80}), Spectrum::Thr,
                                   Spectrum::Rgb, partial),
                    CalibrationError);
  }
}

TEST_CASE("feature-scale intrinsics scale per axis") {
  const CameraModel c = make_camera(80, 70, 47.5, 31.5, 96, 64).scaled_to(12, 8);
  CHECK(c.fx() == doctest::Approx(10.0));
  CHECK(c.fy() == doctest::Approx(8.75));
  CHECK(c.cx() == doctest::Approx(47.5 / 8));
  CHECK(c.cy() == doctest::Approx(31.5 / 8));
}

TEST_CASE("rig transforms are mutually inverse") {
  const CameraRig rig = default_rig();
  rig.require_complete();
  rig.calib.validate();
  for (Spectrum a : kSpectra) {
    CHECK(rig.calib.transform(a, a).is_identity());
    for (Spectrum b : kSpectra) {
      const RigidTransform round = rig.calib.transform(a, b) * rig.calib.transform(b, a);
      for (int i = 0; i < 16; ++i) CHECK(std::abs(round.m[i] - RigidTransform::identity().m[i]) <= 1e-9);
      CHECK(rig.calib.transform(a, b).rigidity_error() <= 1e-9);
    }
  }
}

TEST_CASE("calibration JSON round trip") {
  const CameraRig rig = default_rig();
  const nlohmann::json j = rig_to_json(rig);
  CHECK(j.contains("intrinsics"));
  CHECK(j.contains("extrinsics"));
  for (const char* s : {"rgb", "nir", "thr"}) {
    CHECK(j["intrinsics"][s]["K"].size() == 9);
    CHECK(j["intrinsics"][s].contains("width"));
    CHECK(j["intrinsics"][s].contains("height"));
  }
  CHECK(j["extrinsics"]["rgb->thr"]["T"].size() == 16);
  CHECK(rig_from_json(nlohmann::json::parse(j.dump())) == rig);

  nlohmann::json bad = j;
  bad["extrinsics"]["rgb->thr"]["T"][0] = 2.0;
  CHECK_THROWS_AS(rig_from_json(bad), CalibrationError);
  bad = j;
  bad["intrinsics"]["nir"]["K"][1] = 0.5;
  CHECK_THROWS_AS(rig_from_json(bad), CalibrationError);
  CHECK_THROWS_AS(load_rig("/nonexistent/rig.json"), CalibrationError);
}
