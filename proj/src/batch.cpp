#include "msdepth/batch.hpp"

#include "msdepth/errors.hpp"

namespace msdepth {

Batch collate(const std::vector<MultiSpectralSample>& samples) {
  if (samples.empty()) throw InterfaceError("cannot collate an empty batch");
  Batch b;
  for (Spectrum s : kSpectra) {
    std::vector<torch::Tensor> img, depth, valid;
    for (const auto& sample : samples) {
      const SpectralImage& p = sample.plane(s);
      if (p.image.sizes() != samples.front().plane(s).image.sizes()) {
        throw InterfaceError("samples in a batch must share plane sizes");
      }
      img.push_back(p.image);
      depth.push_back(p.depth);
      valid.push_back(p.valid);
    }
    b.image[index_of(s)] = torch::stack(img);
    b.depth[index_of(s)] = torch::stack(depth);
    b.valid[index_of(s)] = torch::stack(valid);
  }
  for (const auto& sample : samples) {
    b.rigs.push_back(sample.rig);
    b.conditions.push_back(sample.condition);
  }
  return b;
}

}  // namespace msdepth
