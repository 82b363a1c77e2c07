#include "msdepth/fusion.hpp"

#include <cmath>

#include "msdepth/errors.hpp"

namespace msdepth {

namespace {

namespace F = torch::nn::functional;

constexpr double kMaskedLogit = -1e9;

// [B, H, W, D] -> [B * nW, w * w, D]
torch::Tensor partition(const torch::Tensor& x, std::int64_t w) {
  const std::int64_t b = x.size(0), h = x.size(1), wd = x.size(2), d = x.size(3);
  return x.view({b, h / w, w, wd / w, w, d}).permute({0, 1, 3, 2, 4, 5}).reshape({-1, w * w, d});
}

torch::Tensor unpartition(const torch::Tensor& win, std::int64_t w, std::int64_t b, std::int64_t h, std::int64_t wd) {
  const std::int64_t d = win.size(2);
  return win.view({b, h / w, wd / w, w, w, d}).permute({0, 1, 3, 2, 4, 5}).reshape({b, h, wd, d});
}

}  // namespace

void FusionBlockConfig::validate() const {
  if (channels <= 0 || channels % 2 != 0) throw ConfigError("fusion channels must be a positive even integer");
  if (heads <= 0 || (2 * channels) % heads != 0) throw ConfigError("2C must be divisible by the head count");
  if (window <= 0) throw ConfigError("window must be positive");
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

AttentionMask attention_mask(const torch::Tensor& shared_thr, const torch::Tensor& shared_tgt, double eps) {
  if (shared_thr.sizes() != shared_tgt.sizes() || shared_thr.dim() != 4) {
    throw InterfaceError("attention mask inputs must be aligned [B, K, H, W] maps");
  }
  const torch::Tensor dot = (shared_thr * shared_tgt).sum(1);
  const torch::Tensor denom = (shared_thr.norm(2, 1) * shared_tgt.norm(2, 1)).clamp_min(eps);
  return {dot / denom};
}

torch::Tensor aggregate(const std::array<FeatureBundle, 3>& aligned, const std::array<AttentionMask, 3>& masks,
                        bool normalize_shared) {
  const auto sizes = aligned[0].full.sizes();
  for (std::size_t i = 0; i < 3; ++i) {
    if (aligned[i].full.sizes() != sizes) throw InterfaceError("bundles are not aligned to one plane");
    const auto m = masks[i].values.sizes();
    if (m.size() != 3 || m[0] != sizes[0] || m[1] != sizes[2] || m[2] != sizes[3]) {
      throw InterfaceError("mask shape does not match the aligned bundles");
    }
  }
  std::array<torch::Tensor, 3> w;
  for (std::size_t i = 0; i < 3; ++i) w[i] = masks[i].weights().unsqueeze(1);
  torch::Tensor fused = w[0] * aligned[0].shared() + w[1] * aligned[1].shared() + w[2] * aligned[2].shared();
  if (normalize_shared) fused = fused / (w[0] + w[1] + w[2]).clamp_min(1e-8);
  return torch::cat({fused, w[0] * aligned[0].specific(), w[1] * aligned[1].specific(), w[2] * aligned[2].specific()},
                    1);
}

FusionModuleImpl::FusionModuleImpl(FusionBlockConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::int64_t c = cfg_.channels;
  const std::int64_t d = 2 * c;
  const std::int64_t w = cfg_.window;
  const auto hidden = static_cast<std::int64_t>(std::lround(cfg_.mlp_ratio * static_cast<double>(d)));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  qkv_ = register_module("qkv", torch::nn::Linear(d, 3 * d));
  attn_out_ = register_module("attn_out", torch::nn::Linear(d, d));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  mlp1_ = register_module("mlp1", torch::nn::Linear(d, hidden));
  mlp2_ = register_module("mlp2", torch::nn::Linear(hidden, d));
  project_ = register_module("project", torch::nn::Linear(d, c));
  bias_table_ = register_parameter("rel_bias", torch::zeros({(2 * w - 1) * (2 * w - 1), cfg_.heads}));

  torch::NoGradGuard no_grad;
  for (auto* lin : {&qkv_, &attn_out_, &mlp1_, &mlp2_}) {
    (*lin)->weight.normal_(0.0, 0.02).clamp_(-0.04, 0.04);
    torch::nn::init::zeros_((*lin)->bias);
  }
  bias_table_.normal_(0.0, 0.02).clamp_(-0.04, 0.04);
  // The projection starts as the mean of the three masked bundles, so an
  // untrained block hands the decoder a feature it already understands.
  project_->weight.zero_();
  project_->bias.zero_();
  const std::int64_t half = c / 2;
  for (std::int64_t j = 0; j < half; ++j) {
    project_->weight[j][j] = 1.0 / 3.0;
    for (std::int64_t k = 0; k < 3; ++k) project_->weight[half + j][half + k * half + j] = 1.0 / 3.0;
  }

  std::vector<std::int64_t> index;
  for (std::int64_t a = 0; a < w * w; ++a) {
    for (std::int64_t b = 0; b < w * w; ++b) {
      const std::int64_t di = a / w - b / w + w - 1;
      const std::int64_t dj = a % w - b % w + w - 1;
      index.push_back(di * (2 * w - 1) + dj);
    }
  }
  bias_index_ = torch::tensor(index).view({w * w, w * w});
}

torch::Tensor FusionModuleImpl::block(const torch::Tensor& x, const torch::Tensor& key_valid) {
  const std::int64_t b = x.size(0), h = x.size(1), wd = x.size(2), d = x.size(3);
  const std::int64_t w = cfg_.window;
  const std::int64_t heads = cfg_.heads;
  const std::int64_t hd = d / heads;

  const torch::Tensor win = partition(norm1_(x), w);  // [N, T, D]
  const std::int64_t n = win.size(0), t = win.size(1);
  const torch::Tensor qkv = qkv_(win).view({n, t, 3, heads, hd}).permute({2, 0, 3, 1, 4});
  const torch::Tensor q = qkv[0] * (1.0 / std::sqrt(static_cast<double>(hd)));
  const torch::Tensor k = qkv[1];
  const torch::Tensor v = qkv[2];

  torch::Tensor logits = torch::matmul(q, k.transpose(-2, -1));  // [N, heads, T, T]
  const torch::Tensor bias = bias_table_.index_select(0, bias_index_.view(-1)).view({t, t, heads}).permute({2, 0, 1});
  logits = logits + bias.unsqueeze(0).to(logits.scalar_type());
  if (key_valid.defined()) {
    const torch::Tensor kv = partition(key_valid.unsqueeze(-1), w).squeeze(-1);  // [N, T]
    logits = logits.masked_fill(kv.logical_not().view({n, 1, 1, t}), kMaskedLogit);
  }
  const torch::Tensor attended = torch::matmul(torch::softmax(logits, -1), v).permute({0, 2, 1, 3}).reshape({n, t, d});
  torch::Tensor y = x + unpartition(attn_out_(attended), w, b, h, wd);
  y = y + mlp2_(F::gelu(mlp1_(norm2_(y))));
  return project_(y);
}

torch::Tensor FusionModuleImpl::forward(const torch::Tensor& f_cat) {
  if (f_cat.dim() != 4 || f_cat.size(1) != 2 * cfg_.channels) {
    throw InterfaceError("fusion block expects [B, 2C, H, W] with C = " + std::to_string(cfg_.channels));
  }
  if (f_cat.size(2) % cfg_.window != 0 || f_cat.size(3) % cfg_.window != 0) {
    throw InterfaceError("feature size " + std::to_string(f_cat.size(3)) + "x" + std::to_string(f_cat.size(2)) +
                         " is not divisible by window " + std::to_string(cfg_.window));
  }
  return block(f_cat.permute({0, 2, 3, 1}), {}).permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor FusionModuleImpl::forward_padded(const torch::Tensor& f_cat) {
  if (f_cat.dim() != 4 || f_cat.size(1) != 2 * cfg_.channels) {
    throw InterfaceError("fusion block expects [B, 2C, H, W] with C = " + std::to_string(cfg_.channels));
  }
  const std::int64_t h = f_cat.size(2), w = f_cat.size(3), win = cfg_.window;
  const std::int64_t ph = (win - h % win) % win, pw = (win - w % win) % win;
  if (ph == 0 && pw == 0) return forward(f_cat);
  const torch::Tensor padded = F::pad(f_cat, F::PadFuncOptions({0, pw, 0, ph}));
  torch::Tensor key_valid = torch::zeros({f_cat.size(0), h + ph, w + pw}, torch::kBool);
  key_valid.narrow(1, 0, h).narrow(2, 0, w).fill_(true);
  const torch::Tensor out = block(padded.permute({0, 2, 3, 1}), key_valid).permute({0, 3, 1, 2});
  return out.narrow(2, 0, h).narrow(3, 0, w).contiguous();
}

SinglePass run_single_pass(DepthNet& net, const std::array<torch::Tensor, 3>& images) {
  SinglePass out;
  for (Spectrum s : kSpectra) {
    auto [enc, depth] = net->forward_single(images[index_of(s)]);
    out.encoded[index_of(s)] = std::move(enc);
    out.depth[index_of(s)] = std::move(depth);
  }
  return out;
}

PlaneFusion fuse_in_plane(Spectrum plane, const SinglePass& single, std::span<const CameraRig> rigs, DepthNet& net,
                          FusionModule& fusion) {
  if (rigs.empty()) throw CalibrationError("fuse_in_plane needs a rig");
  const int stride = net->config().scale;
  const torch::Tensor plane_depth = subsample_to_stride(single.pred(plane).depth, stride);

  std::array<FeatureBundle, 3> aligned;
  PlaneFusion out;
  out.valid = torch::ones({plane_depth.size(0), plane_depth.size(2), plane_depth.size(3)}, torch::kBool);
  for (Spectrum s : kSpectra) {
    const torch::Tensor& src = single.enc(s).bottleneck.full;
    if (s == plane) {
      aligned[index_of(s)] = single.enc(s).bottleneck;
      continue;
    }
    std::vector<CameraModel> cam_plane, cam_src;
    std::vector<RigidTransform> transforms;
    for (const CameraRig& rig : rigs) {
      cam_plane.push_back(rig.camera(plane));
      cam_src.push_back(rig.camera(s));
      transforms.push_back(rig.calib.transform(plane, s));
    }
    WarpResult warped = align_to_plane(src, plane_depth, cam_plane, cam_src, transforms);
    aligned[index_of(s)] = FeatureBundle{warped.data};
    out.valid = out.valid & warped.valid;
  }

  const torch::Tensor thr_shared = aligned[index_of(Spectrum::Thr)].shared();
  for (Spectrum s : kSpectra) {
    out.masks[index_of(s)] = attention_mask(thr_shared, aligned[index_of(s)].shared(), fusion->config().eps);
  }
  const torch::Tensor f_cat = aggregate(aligned, out.masks, fusion->config().normalize_shared);
  out.feature = FusedFeature{fusion->forward_padded(f_cat), plane};
  out.depth = net->decode(out.feature.map, single.enc(plane).skips);
  return out;
}

}  // namespace msdepth
