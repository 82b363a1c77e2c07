#include "msdepth/model.hpp"

#include <cmath>

#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

namespace F = torch::nn::functional;

int groups_for(int channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor upsample_to(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

void BackboneConfig::validate() const {
  if (base_channels <= 0 || base_channels % 2 != 0) {
    throw ConfigError("base_channels must be a positive even integer");
  }
  if (bottleneck_channels <= 0 || bottleneck_channels % 2 != 0) {
    throw ConfigError("bottleneck_channels must be a positive even integer");
  }
  if (depth_levels < 1 || depth_levels > 6) throw ConfigError("depth_levels must be in [1, 6]");
  if (scale != (1 << depth_levels)) throw ConfigError("scale must equal 2^depth_levels");
}

torch::Tensor channel_repeat(const torch::Tensor& img) {
  const std::int64_t cdim = img.dim() == 4 ? 1 : 0;
  if (img.dim() != 3 && img.dim() != 4) throw InterfaceError("image must be [C, H, W] or [B, C, H, W]");
  const std::int64_t c = img.size(cdim);
  if (c == 3) return img;
  if (c != 1) throw InterfaceError("image must have 1 or 3 channels");
  return img.expand(cdim == 1 ? std::vector<std::int64_t>{img.size(0), 3, img.size(2), img.size(3)}
                              : std::vector<std::int64_t>{3, img.size(1), img.size(2)})
      .contiguous();
}

GlobalEmbedding global_embed(const torch::Tensor& half) {
  const torch::Tensor x = half.dim() == 3 ? half.unsqueeze(0) : half;
  if (x.dim() != 4) throw InterfaceError("global_embed expects [B, K, H, W] or [K, H, W]");
  GlobalEmbedding e;
  e.pooled = x.mean({2, 3});
  const torch::Tensor norm = e.pooled.norm(2, 1, true);
  e.degenerate = norm.squeeze(1).lt(1e-12);
  e.vector = e.pooled / norm.clamp_min(1e-12);
  return e;
}

torch::Tensor depth_activation(const torch::Tensor& logits) {
  static const double lo = std::log(kMinDepth);
  static const double hi = std::log(kMaxDepth);
  // The margin keeps the output strictly inside the range even when the sigmoid saturates.
  constexpr double margin = 1e-6;
  const torch::Tensor s = margin + (1.0 - 2.0 * margin) * torch::sigmoid(logits);
  return torch::exp(lo + (hi - lo) * s);
}

DepthNetImpl::DepthNetImpl(BackboneConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  int in = 3;
  for (int i = 0; i < cfg_.depth_levels; ++i) {
    const int ch = cfg_.base_channels << i;
    Level level;
    const std::string p = "enc" + std::to_string(i);
    level.down = register_module(p + "_down", conv3x3(in, ch, 2));
    level.norm1 = register_module(p + "_norm1", torch::nn::GroupNorm(groups_for(ch), ch));
    level.conv = register_module(p + "_conv", conv3x3(ch, ch));
    level.norm2 = register_module(p + "_norm2", torch::nn::GroupNorm(groups_for(ch), ch));
    enc_.push_back(level);
    in = ch;
  }
  bottleneck_ = register_module(
      "bottleneck", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, cfg_.bottleneck_channels, 1)));

  dec_in_ = register_module("dec_in", conv3x3(cfg_.bottleneck_channels, in));
  dec_in_norm_ = register_module("dec_in_norm", torch::nn::GroupNorm(groups_for(in), in));
  int cur = in;
  for (int i = cfg_.depth_levels - 2; i >= 0; --i) {
    const int ch = cfg_.base_channels << i;
    UpLevel up;
    const std::string p = "dec" + std::to_string(i);
    up.conv = register_module(p + "_conv", conv3x3(cur + ch, ch));
    up.norm = register_module(p + "_norm", torch::nn::GroupNorm(groups_for(ch), ch));
    dec_.push_back(up);
    cur = ch;
  }
  const int head = std::max(8, cfg_.base_channels / 2);
  head1_ = register_module("head1", conv3x3(cur, head));
  head2_ = register_module("head2", conv3x3(head, 1));
}

EncoderOutput DepthNetImpl::encode(const torch::Tensor& img) {
  if (img.dim() != 4 || img.size(1) != 3) throw InterfaceError("encode expects [B, 3, H, W]");
  if (img.size(2) % cfg_.scale != 0 || img.size(3) % cfg_.scale != 0) {
    throw InterfaceError("image size " + std::to_string(img.size(3)) + "x" + std::to_string(img.size(2)) +
                         " is not divisible by the bottleneck stride " + std::to_string(cfg_.scale));
  }
  EncoderOutput out;
  torch::Tensor x = img;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    x = torch::relu(enc_[i].norm1(enc_[i].down(x)));
    x = torch::relu(enc_[i].norm2(enc_[i].conv(x)));
    if (i + 1 < enc_.size()) out.skips.push_back(x);
  }
  out.bottleneck.full = bottleneck_(x);
  return out;
}

DepthPrediction DepthNetImpl::decode(const torch::Tensor& feature, const std::vector<torch::Tensor>& skips) {
  if (feature.dim() != 4 || feature.size(1) != cfg_.bottleneck_channels) {
    throw InterfaceError("decode expects a [B, C, Hs, Ws] bottleneck map");
  }
  if (skips.size() != dec_.size()) throw InterfaceError("decode needs one skip per encoder level");
  torch::Tensor x = torch::relu(dec_in_norm_(dec_in_(feature)));
  for (std::size_t k = 0; k < dec_.size(); ++k) {
    const torch::Tensor& skip = skips[skips.size() - 1 - k];
    x = upsample_to(x, skip.size(2), skip.size(3));
    x = torch::relu(dec_[k].norm(dec_[k].conv(torch::cat({x, skip}, 1))));
  }
  x = upsample_to(x, feature.size(2) * cfg_.scale, feature.size(3) * cfg_.scale);
  x = torch::relu(head1_(x));
  return {depth_activation(head2_(x))};
}

std::pair<EncoderOutput, DepthPrediction> DepthNetImpl::forward_single(const torch::Tensor& img) {
  torch::Tensor x = channel_repeat(img);
  if (x.dim() == 3) x = x.unsqueeze(0);
  EncoderOutput enc = encode(x);
  DepthPrediction depth = decode(enc.bottleneck.full, enc.skips);
  return {std::move(enc), std::move(depth)};
}

}  // namespace msdepth
