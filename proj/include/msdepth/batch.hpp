#pragma once

#include <torch/torch.h>

#include <array>
#include <vector>

#include "msdepth/synthdata.hpp"

namespace msdepth {

/// Samples stacked per spectrum.
struct Batch {
  std::array<torch::Tensor, 3> image;  // [B, C, H, W]
  std::array<torch::Tensor, 3> depth;  // [B, 1, H, W]
  std::array<torch::Tensor, 3> valid;  // [B, H, W] bool
  std::vector<CameraRig> rigs;         // one per element
  std::vector<Condition> conditions;

  std::int64_t size() const { return static_cast<std::int64_t>(rigs.size()); }
};

/// Throws InterfaceError for an empty list or planes of differing sizes.
Batch collate(const std::vector<MultiSpectralSample>& samples);

}  // namespace msdepth
