#pragma once

#include <torch/torch.h>

#include <utility>
#include <vector>

namespace msdepth {

inline constexpr double kMinDepth = 0.5;
inline constexpr double kMaxDepth = 100.0;

struct BackboneConfig {
  int base_channels = 32;
  int depth_levels = 3;
  int bottleneck_channels = 64;  // C; must be even for the shared/specific split
  int scale = 8;                 // bottleneck stride, 2^depth_levels

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Bottleneck feature map with a hard channel split: the front half holds the
/// spectral-shared representation, the back half the spectral-specific one.
struct FeatureBundle {
  torch::Tensor full;  // [B, C, Hs, Ws]

  std::int64_t channels() const { return full.size(1); }
  torch::Tensor shared() const { return full.narrow(1, 0, channels() / 2); }
  torch::Tensor specific() const { return full.narrow(1, channels() / 2, channels() / 2); }
};

struct EncoderOutput {
  FeatureBundle bottleneck;
  std::vector<torch::Tensor> skips;  // finest first
};

struct GlobalEmbedding {
  torch::Tensor pooled;      // [B, C/2] spatial means before normalization
  torch::Tensor vector;      // [B, C/2] unit L2 norm, zero when degenerate
  torch::Tensor degenerate;  // [B] bool, true for all-zero features
};

struct DepthPrediction {
  torch::Tensor depth;  // [B, 1, H, W], meters in (kMinDepth, kMaxDepth)
};

/// Repeats a single-channel image ([B, 1, H, W] or [1, H, W]) three times
/// along the channel axis; three-channel inputs pass through unchanged.
torch::Tensor channel_repeat(const torch::Tensor& img);

/// Global average pooling over the spatial axes followed by L2 normalization
/// (guarded by 1e-12). Accepts [B, K, H, W] or [K, H, W].
GlobalEmbedding global_embed(const torch::Tensor& half);

/// Log-space scaled sigmoid onto the open interval (kMinDepth, kMaxDepth).
torch::Tensor depth_activation(const torch::Tensor& logits);

/// Strided-conv encoder and bilinear-upsampling decoder with skip connections.
/// A single weight set serves every spectrum.
class DepthNetImpl : public torch::nn::Module {
 public:
  explicit DepthNetImpl(BackboneConfig cfg = {});

  /// img: [B, 3, H, W] with H and W divisible by the bottleneck stride.
  EncoderOutput encode(const torch::Tensor& img);
  /// Decodes a bottleneck map using the skips of the matching encoder pass.
  DepthPrediction decode(const torch::Tensor& feature, const std::vector<torch::Tensor>& skips);
  /// channel_repeat, encode, decode.
  std::pair<EncoderOutput, DepthPrediction> forward_single(const torch::Tensor& img);

  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Level {
    torch::nn::Conv2d down{nullptr}, conv{nullptr};
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  };
  struct UpLevel {
    torch::nn::Conv2d conv{nullptr};
    torch::nn::GroupNorm norm{nullptr};
  };

  BackboneConfig cfg_;
  std::vector<Level> enc_;
  torch::nn::Conv2d bottleneck_{nullptr};
  torch::nn::Conv2d dec_in_{nullptr};
  torch::nn::GroupNorm dec_in_norm_{nullptr};
  std::vector<UpLevel> dec_;  // dec_[i] merges skip i
  torch::nn::Conv2d head1_{nullptr}, head2_{nullptr};
};
TORCH_MODULE(DepthNet);

}  // namespace msdepth
