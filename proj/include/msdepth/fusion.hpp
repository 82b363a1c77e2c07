#pragma once

#include <torch/torch.h>

#include <array>
#include <span>
#include <utility>

#include "msdepth/geometry.hpp"
#include "msdepth/model.hpp"
#include "msdepth/types.hpp"

namespace msdepth {

/// Per-pixel cosine agreement between a spectrum's shared feature and the
/// thermal shared feature.
struct AttentionMask {
  torch::Tensor values;  // [B, Hs, Ws] raw cosine in [-1, 1]

  /// Weighting view: negative agreement is treated as unreliable and clamped to 0.
  torch::Tensor weights() const { return values.clamp(0.0, 1.0); }
};

struct FusionBlockConfig {
  int heads = 4;
  int window = 4;
  int channels = 64;  // C, the backbone bottleneck width; the block sees 2C
  double mlp_ratio = 2.0;
  double eps = 1e-8;
  bool normalize_shared = false;  // divide the fused shared block by the mask sum

  void validate() const;
};

struct FusedFeature {
  torch::Tensor map;  // [B, C, Hs, Ws]
  Spectrum plane = Spectrum::Thr;
};

/// dot(thr, tgt) / max(|thr| |tgt|, eps) over the channel axis of [B, K, H, W] maps.
AttentionMask attention_mask(const torch::Tensor& shared_thr, const torch::Tensor& shared_tgt, double eps = 1e-8);

/// Builds [sum_t M_t f_t^sh, M_rgb f_rgb^sp, M_nir f_nir^sp, M_thr f_thr^sp]
/// (2C channels) from bundles and masks given in rgb, nir, thr order.
torch::Tensor aggregate(const std::array<FeatureBundle, 3>& aligned, const std::array<AttentionMask, 3>& masks,
                        bool normalize_shared = false);

/// One windowed multi-head self-attention transformer block on the 2C-channel
/// aggregate followed by a per-pixel linear projection back to C channels.
class FusionModuleImpl : public torch::nn::Module {
 public:
  explicit FusionModuleImpl(FusionBlockConfig cfg = {});

  /// f_cat: [B, 2C, H, W] with H and W divisible by the window size.
  torch::Tensor forward(const torch::Tensor& f_cat);
  /// Zero-pads to the next window multiple, masks padded keys out of the
  /// attention, and crops back.
  torch::Tensor forward_padded(const torch::Tensor& f_cat);

  const FusionBlockConfig& config() const { return cfg_; }

 private:
  torch::Tensor block(const torch::Tensor& x, const torch::Tensor& key_valid);

  FusionBlockConfig cfg_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, attn_out_{nullptr}, mlp1_{nullptr}, mlp2_{nullptr}, project_{nullptr};
  torch::Tensor bias_table_;   // [(2w-1)^2, heads]
  torch::Tensor bias_index_;   // [w^2, w^2], not a parameter
};
TORCH_MODULE(FusionModule);

/// Encoder outputs and single-spectrum predictions of all three spectra.
struct SinglePass {
  std::array<EncoderOutput, 3> encoded;
  std::array<DepthPrediction, 3> depth;

  const EncoderOutput& enc(Spectrum s) const { return encoded[index_of(s)]; }
  const DepthPrediction& pred(Spectrum s) const { return depth[index_of(s)]; }
};

/// Runs the single-spectrum network on every spectrum; images are [B, C, H, W].
SinglePass run_single_pass(DepthNet& net, const std::array<torch::Tensor, 3>& images);

struct PlaneFusion {
  FusedFeature feature;
  DepthPrediction depth;
  std::array<AttentionMask, 3> masks;
  torch::Tensor valid;  // [B, Hs, Ws] where every spectrum projected validly
};

/// Warps the other spectra's bundles into `plane` using that plane's own
/// single-pass depth, weights them by thermal-anchored masks, fuses, and
/// decodes with the plane's skips. `rigs` holds one rig or one per element.
PlaneFusion fuse_in_plane(Spectrum plane, const SinglePass& single, std::span<const CameraRig> rigs, DepthNet& net,
                          FusionModule& fusion);

}  // namespace msdepth
