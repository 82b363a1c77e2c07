#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "msdepth/errors.hpp"
#include "msdepth/synthdata.hpp"

namespace msdepth {

namespace {

cv::Mat to_png16(const torch::Tensor& image) {
  // [C, H, W] float in [0, 1] -> H x W x C uint16, BGR channel order for OpenCV.
  const torch::Tensor hwc =
      (image.clamp(0, 1) * 65535.0).round().to(torch::kInt32).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(hwc.size(0)), w = static_cast<int>(hwc.size(1));
  const int c = static_cast<int>(hwc.size(2));
  cv::Mat mat(h, w, CV_16UC(c));
  const auto* src = hwc.data_ptr<std::int32_t>();
  for (int y = 0; y < h; ++y) {
    auto* row = mat.ptr<std::uint16_t>(y);
    for (int x = 0; x < w * c; ++x) row[x] = static_cast<std::uint16_t>(src[y * w * c + x]);
  }
  if (c == 3) cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
  return mat;
}

void write_png(const std::filesystem::path& path, const cv::Mat& mat) {
  if (!cv::imwrite(path.string(), mat)) throw IoError("failed to write " + path.string());
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const torch::Tensor& map) {
  const torch::Tensor m = (map.dim() == 3 ? map.squeeze(0) : map).to(torch::kFloat).contiguous();
  if (m.dim() != 2) throw InterfaceError("PFM export expects a single-channel map");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::int64_t h = m.size(0), w = m.size(1);
  out << "Pf\n" << w << ' ' << h << "\n-1.0\n";
  const float* data = m.data_ptr<float>();
  // PFM stores rows bottom-to-top; negative scale marks little-endian.
  for (std::int64_t y = h - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(data + y * w), static_cast<std::streamsize>(w * sizeof(float)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

torch::Tensor read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  std::int64_t w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if (magic != "Pf" || w <= 0 || h <= 0 || scale >= 0.0) {
    throw CorruptionError("unsupported PFM header in " + path.string());
  }
  torch::Tensor m = torch::empty({h, w}, torch::kFloat);
  float* data = m.data_ptr<float>();
  for (std::int64_t y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(data + y * w), static_cast<std::streamsize>(w * sizeof(float)));
  }
  if (!in) throw CorruptionError("truncated PFM " + path.string());
  return m;
}

void export_dataset(const SampleSource& source, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.csv");
  if (!index) throw IoError("cannot write " + (dir / "index.csv").string());
  index << "sample_id,condition,seed\n";
  for (std::size_t i = 0; i < source.size(); ++i) {
    const MultiSpectralSample sample = source.render(i);
    std::ostringstream id;
    id << "sample_" << std::setw(5) << std::setfill('0') << i;
    const std::filesystem::path sdir = dir / id.str();
    std::filesystem::create_directories(sdir);
    for (Spectrum s : kSpectra) {
      const SpectralImage& plane = sample.plane(s);
      const std::string name(to_string(s));
      write_png(sdir / (name + ".png"), to_png16(plane.image));
      write_pfm(sdir / ("depth_" + name + ".pfm"), plane.depth);
      cv::Mat valid(static_cast<int>(plane.valid.size(0)), static_cast<int>(plane.valid.size(1)), CV_8UC1);
      const torch::Tensor v = plane.valid.to(torch::kUInt8).contiguous() * 255;
      std::memcpy(valid.data, v.data_ptr<std::uint8_t>(), static_cast<std::size_t>(v.numel()));
      write_png(sdir / ("valid_" + name + ".png"), valid);
    }
    save_rig(sample.rig, sdir / "calibration.json");
    index << id.str() << ',' << to_string(sample.condition) << ',' << sample.seed << '\n';
  }
}

}  // namespace msdepth
